"""Fourier transforms and the truncated spectral convolution.

Transforms support any sequence length (the waveform pipelines use odd and
non-power-of-two lengths such as 205 and 504); numpy's pocketfft provides the
mixed-radix/Bluestein machinery.  Convention: unnormalized forward transform,
1/N on the inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (ShapeError, Tensor, as_tensor, complex_mode_multiply,
                       irfft, parameter, rfft)

__all__ = ["SpectralWeights", "init_spectral_weights", "rfft", "irfft",
           "spectral_conv"]


@dataclass
class SpectralWeights:
    """Learnable per-mode channel mixing, truncated to the first `modes`."""

    modes: int
    weights: Tensor  # complex [C_in, C_out, modes]

    def __post_init__(self):
        if self.weights.data.ndim != 3 or self.weights.shape[2] != self.modes:
            raise ShapeError(
                f"SpectralWeights: weights shape {self.weights.shape} does not "
                f"carry {self.modes} modes")

    @property
    def c_in(self) -> int:
        return self.weights.shape[0]

    @property
    def c_out(self) -> int:
        return self.weights.shape[1]


def init_spectral_weights(c_in: int, c_out: int, modes: int,
                          rng: np.random.Generator,
                          name: str) -> SpectralWeights:
    """Uniform complex init with scale 1/(C_in*C_out)."""
    s = 1.0 / (c_in * c_out)
    w = s * (rng.random((c_in, c_out, modes))
             + 1j * rng.random((c_in, c_out, modes)))
    return SpectralWeights(modes=modes, weights=parameter(w, name))


def spectral_conv(x, w: SpectralWeights) -> Tensor:
    """Mix channels mode-by-mode in the frequency domain.

    x: real [C_in,(B,)N] -> [C_out,(B,)N].  The first `w.modes` Fourier
    coefficients are multiplied by the weight matrix, the rest are dropped,
    and the result is transformed back to the time domain.
    """
    x = as_tensor(x)
    if x.data.ndim not in (2, 3) or x.shape[0] != w.c_in:
        raise ShapeError(
            f"spectral_conv: input shape {x.shape} does not provide "
            f"{w.c_in} channels")
    n = x.shape[-1]
    half = n // 2 + 1
    if w.modes > half:
        raise ShapeError(
            f"spectral_conv: {w.modes} modes exceed the {half} available at "
            f"length {n}")
    spec = rfft(x)
    mixed = complex_mode_multiply(spec, w.weights, half)
    return irfft(mixed, n)
