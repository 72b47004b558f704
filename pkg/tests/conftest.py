"""Shared test utilities: the finite-difference gradient oracle."""

import numpy as np
import pytest

from resfno import autodiff as ad

FD_STEP = 1e-6
FD_TOL = 1e-5


def finite_difference(build_loss, tensor: ad.Tensor, flat_index: int,
                      component: str = "real", step: float = FD_STEP) -> float:
    """Central-difference derivative of build_loss() w.r.t. one entry."""
    flat = tensor.data.ravel()
    orig = flat[flat_index]
    delta = step if component == "real" else 1j * step
    flat[flat_index] = orig + delta
    lp = float(build_loss().data)
    flat[flat_index] = orig - delta
    lm = float(build_loss().data)
    flat[flat_index] = orig
    return (lp - lm) / (2.0 * step)


def check_gradients(build_loss, tensors: dict[str, ad.Tensor],
                    rng: np.random.Generator, probes_per_tensor: int = 6,
                    tol: float = FD_TOL) -> float:
    """Compare backward() with central finite differences on random entries.

    Relative error uses max(1, |a|, |b|) in the denominator so near-zero
    gradients are held to the same absolute scale.  Returns the worst error.
    """
    with ad.Tape() as tape:
        loss = build_loss()
    grads = ad.backward(tape, loss)
    worst = 0.0
    for name, tensor in tensors.items():
        size = tensor.data.size
        count = min(probes_per_tensor, size)
        indices = rng.choice(size, size=count, replace=False)
        components = ("real", "imag") if tensor.is_complex else ("real",)
        for idx in indices:
            for comp in components:
                fd = finite_difference(build_loss, tensor, int(idx), comp)
                g = grads[name].ravel()[int(idx)]
                val = g.real if comp == "real" else g.imag
                err = abs(val - fd) / max(1.0, abs(val), abs(fd))
                worst = max(worst, err)
                assert err < tol, (
                    f"{name}[{idx}].{comp}: autodiff {val} vs finite "
                    f"difference {fd} (rel err {err:.2e})")
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
