"""Neural building blocks: circular convolution, MLPs, FNO and residual
blocks, the input-fusion stage, and the output head.

All layer functions are pure with respect to their parameter bundles and
accept per-sample [C, N] or channel-major batched [C, B, N] activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, as_tensor, parameter
from .spectral import SpectralWeights, spectral_conv

__all__ = [
    "Conv1dParams", "MlpParams", "FnoBlockParams", "ResBlockParams",
    "init_conv1d", "init_mlp", "conv1d_circular", "instance_norm", "mlp",
    "fno_block", "res_block", "fuse_inputs", "output_head",
]


@dataclass
class Conv1dParams:
    kernel: Tensor  # [C_out, C_in, ksize], ksize odd
    bias: Tensor    # [C_out]

    def __post_init__(self):
        if self.kernel.data.ndim != 3 or self.kernel.shape[2] % 2 == 0:
            raise ShapeError(
                f"Conv1dParams: kernel shape {self.kernel.shape} must be "
                "[C_out, C_in, odd ksize]")

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1]

    @property
    def ksize(self) -> int:
        return self.kernel.shape[2]


@dataclass
class MlpParams:
    """Affine chain with ReLU between layers (none after the last)."""

    weights: list[Tensor]
    biases: list[Tensor]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("MlpParams: weights and biases must pair up")
        for w_prev, w_next in zip(self.weights, self.weights[1:]):
            if w_next.shape[1] != w_prev.shape[0]:
                raise ShapeError(
                    f"MlpParams: layer dims {w_prev.shape} -> {w_next.shape} "
                    "do not chain")

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_width(self) -> int:
        return self.weights[-1].shape[0]


@dataclass
class FnoBlockParams:
    spectral: SpectralWeights
    pointwise: Conv1dParams  # ksize 1 skip path

    def __post_init__(self):
        if self.pointwise.ksize != 1:
            raise ShapeError("FnoBlockParams: pointwise path must have ksize 1")
        if (self.pointwise.c_in != self.spectral.c_in
                or self.pointwise.c_out != self.spectral.c_out):
            raise ShapeError("FnoBlockParams: spectral/pointwise channel mismatch")


@dataclass
class ResBlockParams:
    conv1: Conv1dParams
    norm1_gain: Tensor
    norm1_shift: Tensor
    conv2: Conv1dParams
    norm2_gain: Tensor
    norm2_shift: Tensor

    def __post_init__(self):
        d = self.conv1.c_in
        # identity shortcut requires matching channel counts throughout
        if not (self.conv1.c_out == d and self.conv2.c_in == d
                and self.conv2.c_out == d):
            raise ShapeError("ResBlockParams: channels must match the shortcut")


def init_conv1d(c_out: int, c_in: int, ksize: int,
                rng: np.random.Generator, prefix: str) -> Conv1dParams:
    bound = np.sqrt(1.0 / (c_in * ksize))
    kernel = rng.uniform(-bound, bound, (c_out, c_in, ksize))
    bias = rng.uniform(-bound, bound, c_out)
    return Conv1dParams(kernel=parameter(kernel, f"{prefix}.kernel"),
                        bias=parameter(bias, f"{prefix}.bias"))


def init_mlp(dims: list[int], rng: np.random.Generator,
             prefix: str) -> MlpParams:
    weights, biases = [], []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        bound = np.sqrt(1.0 / d_in)
        weights.append(parameter(rng.uniform(-bound, bound, (d_out, d_in)),
                                 f"{prefix}.w{i}"))
        biases.append(parameter(rng.uniform(-bound, bound, d_out),
                                f"{prefix}.b{i}"))
    return MlpParams(weights=weights, biases=biases)


def conv1d_circular(x, p: Conv1dParams) -> Tensor:
    return ad.conv1d_circular(x, p.kernel, p.bias)


def instance_norm(x, gain, shift) -> Tensor:
    return ad.instance_norm(x, gain, shift)


def mlp(x, p: MlpParams) -> Tensor:
    out = as_tensor(x)
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        out = ad.affine(out, w, b)
        if i != last:
            out = ad.relu(out)
    return out


def fno_block(x, p: FnoBlockParams) -> Tensor:
    """relu(spectral branch + pointwise skip)."""
    return ad.relu(ad.add(spectral_conv(x, p.spectral),
                          conv1d_circular(x, p.pointwise)))


def res_block(x, p: ResBlockParams) -> Tensor:
    """relu(F(x) + x) with F = conv -> norm -> relu -> conv -> norm."""
    x = as_tensor(x)
    f = conv1d_circular(x, p.conv1)
    f = instance_norm(f, p.norm1_gain, p.norm1_shift)
    f = ad.relu(f)
    f = conv1d_circular(f, p.conv2)
    f = instance_norm(f, p.norm2_gain, p.norm2_shift)
    return ad.relu(ad.add(f, x))


def fuse_inputs(seq, scalars, lift: Conv1dParams, enc: MlpParams) -> Tensor:
    """Lift the sequence stream and add the broadcast scalar encoding.

    seq: [C_seq,(B,)N]; scalars: [3] (or [3, B] batched, channel-major).
    """
    seq = as_tensor(seq)
    scalars = as_tensor(scalars)
    if seq.shape[0] != lift.c_in:
        raise ShapeError(
            f"fuse_inputs: sequence has {seq.shape[0]} channels, lift expects "
            f"{lift.c_in}")
    if scalars.shape[0] != enc.in_width:
        raise ShapeError(
            f"fuse_inputs: {scalars.shape[0]} scalars, encoder expects "
            f"{enc.in_width}")
    if enc.out_width != lift.c_out:
        raise ShapeError(
            f"fuse_inputs: encoder width {enc.out_width} != lifted width "
            f"{lift.c_out}")
    n = seq.shape[-1]
    lifted = conv1d_circular(seq, lift)
    encoded = mlp(scalars, enc)
    return ad.add(lifted, ad.broadcast_over_time(encoded, n))


def output_head(x, head: MlpParams) -> Tensor:
    """Project latent channels to the output sequence, pointwise in time.

    [d,(B,)N] -> [N] (or [B, N] for batched input).
    """
    x = as_tensor(x)
    if x.shape[0] != head.in_width or head.out_width != 1:
        raise ShapeError(
            f"output_head: input width {x.shape[0]} vs head "
            f"{head.in_width}->{head.out_width}")
    return ad.squeeze_channel(mlp(x, head))  # [(B,)N]
