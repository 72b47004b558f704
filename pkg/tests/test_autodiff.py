"""Primitive-level contracts of the tape engine."""

import numpy as np
import pytest

from resfno import autodiff as ad

from conftest import check_gradients


def test_relu_values():
    assert np.array_equal(ad.relu([1.0, -1.0, 0.0]).data, [1.0, 0.0, 0.0])


def test_add_values():
    assert np.array_equal(ad.add([1.0, 2.0], [3.0, 4.0]).data, [4.0, 6.0])


def test_matmul_ones():
    out = ad.matmul(np.ones((2, 3)), np.ones((3, 1)))
    # oracle: direct summation over the shared axis
    assert np.array_equal(out.data, [[3.0], [3.0]])


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ad.ShapeError, match=r"add.*\(2,\).*\(3,\)"):
        ad.add(np.ones(2), np.ones(3))
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_backward_relu_subgradient():
    x = ad.parameter([1.0, -1.0], "x")
    with ad.Tape() as tape:
        loss = ad.reduce_sum(ad.relu(x))
    grads = ad.backward(tape, loss)
    assert np.array_equal(grads["x"], [1.0, 0.0])


def test_relu_subgradient_zero_at_zero():
    x = ad.parameter([0.0], "x")
    with ad.Tape() as tape:
        loss = ad.reduce_sum(ad.relu(x))
    grads = ad.backward(tape, loss)
    assert grads["x"][0] == 0.0


def test_backward_square():
    x = ad.parameter([3.0], "x")
    with ad.Tape() as tape:
        loss = ad.reduce_sum(ad.mul(x, x))
    assert np.array_equal(ad.backward(tape, loss)["x"], [6.0])


def test_backward_rejects_nonscalar_loss():
    x = ad.parameter([1.0, 2.0], "x")
    with ad.Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(ad.TapeError, match="scalar"):
        ad.backward(tape, y)


def test_backward_rejects_loss_not_on_tape():
    x = ad.parameter([1.0], "x")
    with ad.Tape() as tape:
        ad.relu(x)
    stray = ad.reduce_sum(ad.relu(x))  # built after the tape closed
    with pytest.raises(ad.TapeError, match="not produced"):
        ad.backward(tape, stray)


def test_backward_linearity(rng):
    x = ad.parameter(rng.uniform(-1, 1, 8), "x")
    with ad.Tape() as tape:
        y = ad.mul(x, x)
        l1 = ad.reduce_sum(y)
        l2 = ad.reduce_mean(ad.relu(y))
        combined = ad.add(ad.scale(l1, 1.7), ad.scale(l2, -0.4))
    g = ad.backward(tape, combined)["x"]
    g1 = ad.backward(tape, l1)["x"]
    g2 = ad.backward(tape, l2)["x"]
    assert np.max(np.abs(g - (1.7 * g1 - 0.4 * g2))) < 1e-10


def test_rfft_irfft_adjoint_pair(rng):
    for n in (4, 5, 205, 256):
        x = ad.parameter(rng.uniform(-1, 1, n), "x")
        with ad.Tape() as tape:
            loss = ad.reduce_sum(ad.irfft(ad.rfft(x), n))
        grads = ad.backward(tape, loss)
        assert np.max(np.abs(grads["x"] - 1.0)) < 1e-9


def test_unused_parameter_gets_zero_gradient(rng):
    x = ad.parameter(rng.uniform(-1, 1, 3), "x")
    dead = ad.parameter(rng.uniform(-1, 1, 3), "dead")
    with ad.Tape() as tape:
        live = ad.reduce_sum(ad.mul(x, x))
        ad.reduce_sum(dead)  # on the tape, but not feeding the loss
        loss = ad.scale(live, 1.0)
    grads = ad.backward(tape, loss)
    assert np.array_equal(grads["dead"], np.zeros(3))


def test_forward_outputs_finite_on_finite_inputs(rng):
    x = rng.uniform(-1, 1, (4, 33))
    k = rng.uniform(-1, 1, (4, 4, 5))
    b = rng.uniform(-1, 1, 4)
    y = ad.conv1d_circular(x, k, b)
    z = ad.instance_norm(y, np.ones(4), np.zeros(4))
    w = ad.irfft(ad.rfft(z), 33)
    assert np.all(np.isfinite(w.data))


@pytest.mark.parametrize("op_name", [
    "add", "sub", "mul", "matmul", "relu", "reduce_sum", "reduce_mean",
    "affine", "broadcast_over_time", "conv1d_circular", "instance_norm",
    "rfft_irfft", "complex_mode_multiply", "squeeze_channel",
])
def test_primitive_gradients_match_finite_differences(op_name, rng):
    n = 9
    if op_name in ("add", "sub", "mul"):
        a = ad.parameter(rng.uniform(-1, 1, n), "a")
        b = ad.parameter(rng.uniform(-1, 1, n), "b")
        op = getattr(ad, op_name)
        build = lambda: ad.reduce_sum(ad.mul(y := op(a, b), y))
        tensors = {"a": a, "b": b}
    elif op_name == "matmul":
        a = ad.parameter(rng.uniform(-1, 1, (3, 4)), "a")
        b = ad.parameter(rng.uniform(-1, 1, (4, 2)), "b")
        build = lambda: ad.reduce_sum(ad.mul(y := ad.matmul(a, b), y))
        tensors = {"a": a, "b": b}
    elif op_name in ("relu", "reduce_sum", "reduce_mean"):
        a = ad.parameter(rng.uniform(-1, 1, n), "a")
        op = getattr(ad, op_name)
        if op_name == "relu":
            build = lambda: ad.reduce_sum(ad.mul(y := ad.relu(a), y))
        else:
            build = lambda: ad.mul(y := op(a), y)
        tensors = {"a": a}
    elif op_name == "affine":
        x = ad.parameter(rng.uniform(-1, 1, (3, 7)), "x")
        w = ad.parameter(rng.uniform(-1, 1, (4, 3)), "w")
        b = ad.parameter(rng.uniform(-1, 1, 4), "b")
        build = lambda: ad.reduce_sum(ad.mul(y := ad.affine(x, w, b), y))
        tensors = {"x": x, "w": w, "b": b}
    elif op_name == "broadcast_over_time":
        v = ad.parameter(rng.uniform(-1, 1, 5), "v")
        build = lambda: ad.reduce_sum(
            ad.mul(y := ad.broadcast_over_time(v, 6), y))
        tensors = {"v": v}
    elif op_name == "conv1d_circular":
        x = ad.parameter(rng.uniform(-1, 1, (3, 11)), "x")
        k = ad.parameter(rng.uniform(-1, 1, (2, 3, 5)), "k")
        b = ad.parameter(rng.uniform(-1, 1, 2), "b")
        build = lambda: ad.reduce_sum(
            ad.mul(y := ad.conv1d_circular(x, k, b), y))
        tensors = {"x": x, "k": k, "b": b}
    elif op_name == "instance_norm":
        x = ad.parameter(rng.uniform(-1, 1, (3, 9)), "x")
        g = ad.parameter(rng.uniform(0.5, 1.5, 3), "g")
        s = ad.parameter(rng.uniform(-1, 1, 3), "s")
        build = lambda: ad.reduce_sum(
            ad.mul(y := ad.instance_norm(x, g, s), y))
        tensors = {"x": x, "g": g, "s": s}
    elif op_name == "rfft_irfft":
        x = ad.parameter(rng.uniform(-1, 1, (2, 11)), "x")
        build = lambda: ad.reduce_sum(
            ad.mul(y := ad.irfft(ad.rfft(x), 11), y))
        tensors = {"x": x}
    elif op_name == "complex_mode_multiply":
        x = ad.parameter(rng.uniform(-1, 1, (2, 13)), "x")
        w = ad.parameter(rng.uniform(-1, 1, (2, 3, 4))
                         + 1j * rng.uniform(-1, 1, (2, 3, 4)), "w")
        build = lambda: ad.reduce_sum(ad.mul(y := ad.irfft(
            ad.complex_mode_multiply(ad.rfft(x), w, 13 // 2 + 1), 13), y))
        tensors = {"x": x, "w": w}
    else:  # squeeze_channel
        x = ad.parameter(rng.uniform(-1, 1, (1, 8)), "x")
        build = lambda: ad.reduce_sum(ad.mul(y := ad.squeeze_channel(x), y))
        tensors = {"x": x}
    check_gradients(build, tensors, rng)


def test_forward_primitive_dispatch():
    out = ad.forward_primitive("relu", [1.0, -1.0, 0.0])
    assert np.array_equal(out.data, [1.0, 0.0, 0.0])
    out = ad.forward_primitive("add", [1.0, 2.0], [3.0, 4.0])
    assert np.array_equal(out.data, [4.0, 6.0])
    with pytest.raises(ValueError, match="unknown primitive"):
        ad.forward_primitive("softmax", [1.0])
    required = {"add", "sub", "mul-elementwise", "matmul", "conv1d-circular",
                "relu", "complex-mode-multiply", "rfft", "irfft",
                "reduce-sum", "reduce-mean", "broadcast-over-time", "affine"}
    assert required <= set(ad.PRIMITIVES)


def test_tapes_are_thread_isolated(rng):
    import threading

    errors = []

    def worker(seed):
        try:
            local = np.random.default_rng(seed)
            x = ad.parameter(local.uniform(-1, 1, 64), f"x{seed}")
            for _ in range(30):
                with ad.Tape() as tape:
                    loss = ad.reduce_sum(ad.mul(x, x))
                grads = ad.backward(tape, loss)
                assert np.allclose(grads[f"x{seed}"], 2 * x.data)
        except Exception as err:  # pragma: no cover - surfaced via errors
            errors.append(err)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
