"""Reverse-mode automatic differentiation over numpy arrays.

A define-by-run tape records every primitive applied to `Tensor` values while
a `Tape` is active (``with Tape() as tape: ...``).  `backward` then replays
the tape once in reverse and returns gradients for every trainable parameter
that participated in the forward pass.

Everything is double precision: float64 for real tensors, complex128 for
Fourier-domain tensors (complex128 stores interleaved real/imaginary doubles).
The gradient of a real loss with respect to a complex tensor w follows the
convention g = dL/dRe(w) + i*dL/dIm(w), so finite differences on the real and
imaginary components can be checked against Re(g) and Im(g) directly.
"""

from __future__ import annotations

import threading

import numpy as np

NORM_EPS = 1e-5  # variance floor inside instance_norm


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


class TapeError(ValueError):
    """Raised when backward() is asked something the tape cannot answer."""


class Tensor:
    """Array value tracked by the tape.

    Trainable tensors (parameters) must carry a unique name; `backward`
    returns gradients keyed by those names.
    """

    __slots__ = ("data", "name", "trainable")

    def __init__(self, data, name: str | None = None, trainable: bool = False):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.name = name
        self.trainable = bool(trainable)
        if self.trainable and not name:
            raise ValueError("trainable tensors must be named")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_complex(self) -> bool:
        return self.data.dtype == np.complex128

    def copy_array(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def parameter(data, name: str) -> Tensor:
    return Tensor(data, name=name, trainable=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "out", "inputs", "vjp")

    def __init__(self, op, out, inputs, vjp):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of primitives; rebuilt on every forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def _record(op: str, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
    stack = _stack()
    if stack:
        stack[-1].nodes.append(_Node(op, out, inputs, vjp))


def _shape_err(op: str, *shapes) -> ShapeError:
    pretty = " and ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: incompatible operand shapes {pretty}")


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_err("add", a.shape, b.shape)
    out = Tensor(a.data + b.data)
    _record("add", out, (a, b), lambda g: (g, g))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_err("sub", a.shape, b.shape)
    out = Tensor(a.data - b.data)
    _record("sub", out, (a, b), lambda g: (g, -g))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_err("mul", a.shape, b.shape)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    _record("mul", out, (a, b), lambda g: (g * bd, g * ad))
    return out


def scale(a, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated w.r.t. c)."""
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    _record("scale", out, (a,), lambda g: (g * c,))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    od = out.data  # strictly positive exactly where a > 0: subgradient 0 at 0
    _record("relu", out, (a,), lambda g: (g * (od > 0),))
    return out


def reduce_sum(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum())
    shape = a.shape
    _record("reduce_sum", out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    return out


def reduce_mean(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean())
    shape, size = a.shape, a.data.size
    _record("reduce_mean", out, (a,),
            lambda g: (np.broadcast_to(g / size, shape).copy(),))
    return out


# ---------------------------------------------------------------------------
# linear-algebra primitives


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data
    _record("matmul", out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


def affine(x, w, b) -> Tensor:
    """w @ x + b with x of shape [C_in], [C_in, N] or [C_in, B, N].

    The contraction is over the leading (channel) axis; the bias broadcasts
    over all trailing axes.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.data.ndim != 2 or b.data.ndim != 1 or w.shape[0] != b.shape[0]:
        raise _shape_err("affine", w.shape, b.shape)
    if x.data.ndim < 1 or x.shape[0] != w.shape[1]:
        raise _shape_err("affine", w.shape, x.shape)
    c_out = w.shape[0]
    trailing = x.shape[1:]
    flat = x.data.reshape(x.shape[0], -1)
    y = (w.data @ flat).reshape((c_out,) + trailing)
    y += b.data.reshape((c_out,) + (1,) * len(trailing))
    out = Tensor(y)
    xd, wd = x.data, w.data

    def vjp(g):
        gf = g.reshape(c_out, -1)
        xf = xd.reshape(xd.shape[0], -1)
        gx = (wd.T @ gf).reshape(xd.shape)
        gw = gf @ xf.T
        gb = gf.sum(axis=1)
        return gx, gw, gb

    _record("affine", out, (x, w, b), vjp)
    return out


def broadcast_over_time(v, n: int) -> Tensor:
    """Tile a channel vector [C] (or batched [C, B]) along a new time axis."""
    v = as_tensor(v)
    if v.data.ndim not in (1, 2) or n < 1:
        raise _shape_err("broadcast_over_time", v.shape, (n,))
    out = Tensor(np.repeat(v.data[..., None], n, axis=-1))
    _record("broadcast_over_time", out, (v,), lambda g: (g.sum(axis=-1),))
    return out


def squeeze_channel(x) -> Tensor:
    """Drop a leading singleton channel axis: [1,(B,)N] -> [(B,)N]."""
    x = as_tensor(x)
    if x.data.ndim < 2 or x.shape[0] != 1:
        raise _shape_err("squeeze_channel", x.shape)
    out = Tensor(x.data[0])
    _record("squeeze_channel", out, (x,), lambda g: (g[None, ...],))
    return out


# ---------------------------------------------------------------------------
# circular 1-d convolution

def _as_cbn(data: np.ndarray):
    """View [C, N] as [C, 1, N]; pass [C, B, N] through."""
    if data.ndim == 2:
        return data[:, None, :], True
    return data, False


def _circ_pad(x_cbn: np.ndarray, h: int) -> np.ndarray:
    if not h:
        return np.ascontiguousarray(x_cbn)
    n = x_cbn.shape[-1]
    return np.concatenate([x_cbn[:, :, n - h:], x_cbn, x_cbn[:, :, :h]],
                          axis=-1)


def _circ_conv_core(x_cbn: np.ndarray, kernel: np.ndarray,
                    ext: np.ndarray | None = None) -> np.ndarray:
    """Circular correlation-style conv on channel-major [C_in, B, N] data."""
    c_out, c_in, ks = kernel.shape
    _, b, n = x_cbn.shape
    h = ks // 2
    if ext is None:
        ext = _circ_pad(x_cbn, h)
    flat = ext.reshape(c_in, b * (n + 2 * h))
    taps = np.ascontiguousarray(kernel.transpose(2, 0, 1))  # BLAS needs contiguity
    buf = np.empty((c_out, b * (n + 2 * h)), dtype=ext.dtype)
    bufv = buf.reshape(c_out, b, n + 2 * h)
    np.matmul(taps[0], flat, out=buf)
    y = bufv[:, :, :n].copy()
    for j in range(1, ks):
        np.matmul(taps[j], flat, out=buf)
        y += bufv[:, :, j:j + n]
    return y


def conv1d_circular(x, kernel, bias) -> Tensor:
    """Length-preserving circular conv: x [C_in,(B,)N] -> [C_out,(B,)N].

    output[c,t] = bias[c] + sum_{ci,j} kernel[c,ci,j] * x[ci,(t+j-(ks-1)/2) mod N]
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if kernel.data.ndim != 3:
        raise _shape_err("conv1d_circular", kernel.shape, x.shape)
    c_out, c_in, ks = kernel.shape
    if x.data.ndim not in (2, 3) or x.shape[0] != c_in:
        raise _shape_err("conv1d_circular", kernel.shape, x.shape)
    n = x.shape[-1]
    if ks % 2 == 0:
        raise ShapeError(f"conv1d_circular: kernel size {ks} must be odd")
    if ks > n:
        raise ShapeError(f"conv1d_circular: kernel size {ks} exceeds length {n}")
    if bias.shape != (c_out,):
        raise _shape_err("conv1d_circular", kernel.shape, bias.shape)

    xd, was_2d = _as_cbn(x.data)
    h = ks // 2
    ext = _circ_pad(xd, h)
    y = _circ_conv_core(xd, kernel.data, ext=ext)
    y += bias.data[:, None, None]
    out = Tensor(y[:, 0, :] if was_2d else y)
    kd = kernel.data

    def vjp(g):
        gd, _ = _as_cbn(g)
        # grad wrt x: correlate the upstream gradient with the flipped,
        # channel-transposed kernel
        k_rev = kd[:, :, ::-1].transpose(1, 0, 2)
        gx = _circ_conv_core(gd, k_rev)
        if was_2d:
            gx = gx[:, 0, :]
        # grad wrt kernel tap j: <g, x shifted by j-h>; one gemm over the
        # unfolded windows
        b_sz = xd.shape[1]
        win = np.lib.stride_tricks.as_strided(
            ext, shape=(c_in, ks, b_sz, n),
            strides=(ext.strides[0], ext.strides[2], ext.strides[1],
                     ext.strides[2]))
        xu = win.reshape(c_in * ks, b_sz * n)  # copies (strided source)
        g2 = gd.reshape(c_out, b_sz * n)
        gk = (g2 @ xu.T).reshape(c_out, c_in, ks)
        gb = gd.sum(axis=(1, 2))
        return gx, gk, gb

    _record("conv1d_circular", out, (x, kernel, bias), vjp)
    return out


# ---------------------------------------------------------------------------
# instance normalization (per channel over the time axis)


def instance_norm(x, gain, shift, eps: float = NORM_EPS) -> Tensor:
    """Per-channel normalization over time, then affine gain/shift."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    if x.data.ndim not in (2, 3):
        raise _shape_err("instance_norm", x.shape, gain.shape)
    c = x.shape[0]
    n = x.shape[-1]
    if n < 2:
        raise ShapeError(f"instance_norm: time extent {n} must be >= 2")
    if gain.shape != (c,) or shift.shape != (c,):
        raise _shape_err("instance_norm", x.shape, gain.shape, shift.shape)

    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gshape = (c,) + (1,) * (xd.ndim - 1)
    out = Tensor(gain.data.reshape(gshape) * xhat + shift.data.reshape(gshape))
    gaind = gain.data

    def vjp(g):
        sum_axes = tuple(range(1, xd.ndim))
        gxh = g * xhat
        ggain = gxh.sum(axis=sum_axes)
        gshift = g.sum(axis=sum_axes)
        gx = g * gaind.reshape(gshape)      # dL/dxhat
        corr = gx.mean(axis=-1, keepdims=True)
        corr = corr + xhat * (gxh.mean(axis=-1, keepdims=True)
                              * gaind.reshape(gshape))
        gx -= corr
        gx *= inv
        return gx, ggain, gshift

    _record("instance_norm", out, (x, gain, shift), vjp)
    return out


# ---------------------------------------------------------------------------
# Fourier primitives
#
# Unnormalized forward transform, 1/N on the inverse (numpy convention).
# Both are linear, so their adjoints are closed-form: the half-spectrum
# representation makes interior modes count twice, handled by `_mode_weights`.


def _mode_weights(n: int) -> np.ndarray:
    m = n // 2 + 1
    w = np.full(m, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def rfft(x) -> Tensor:
    """Real DFT along the last axis; works for any length, odd included."""
    x = as_tensor(x)
    if x.is_complex:
        raise ShapeError("rfft: input must be real")
    n = x.shape[-1] if x.data.ndim else 0
    if x.data.ndim < 1 or n < 1:
        raise ShapeError("rfft: input must have at least one sample")
    out = Tensor(np.fft.rfft(x.data, axis=-1))
    cw = _mode_weights(n)

    def vjp(g):
        return (n * np.fft.irfft(g / cw, n=n, axis=-1),)

    _record("rfft", out, (x,), vjp)
    return out


def irfft(x, n: int) -> Tensor:
    """Inverse of `rfft`; `n` is the original (time-domain) length."""
    x = as_tensor(x)
    if x.data.ndim < 1:
        raise ShapeError("irfft: input must have at least one mode")
    m = x.shape[-1]
    if n < 1 or n // 2 + 1 != m:
        raise ShapeError(
            f"irfft: length {n} inconsistent with spectrum of {m} modes")
    out = Tensor(np.fft.irfft(x.data, n=n, axis=-1))
    cw = _mode_weights(n)

    def vjp(g):
        return (np.fft.rfft(g, axis=-1) * (cw / n),)

    _record("irfft", out, (x,), vjp)
    return out


def complex_mode_multiply(x, w, n_modes: int) -> Tensor:
    """Per-mode channel mixing with truncation.

    x: complex [C_in,(B,)M]; w: complex [C_in, C_out, k].  Modes m < k are
    mixed as out[co,m] = sum_ci x[ci,m] * w[ci,co,m]; modes >= k are zeroed.
    `n_modes` is the output M (must match x).
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.data.ndim != 3:
        raise _shape_err("complex_mode_multiply", w.shape, x.shape)
    c_in, c_out, k = w.shape
    if x.data.ndim not in (2, 3) or x.shape[0] != c_in:
        raise _shape_err("complex_mode_multiply", w.shape, x.shape)
    m = x.shape[-1]
    if m != n_modes or k > m:
        raise ShapeError(
            f"complex_mode_multiply: {k} modes kept of {m} available (x has "
            f"{m} modes, expected {n_modes})")

    xd, was_2d = _as_cbn(x.data)
    b = xd.shape[1]
    xk = np.ascontiguousarray(xd[:, :, :k].transpose(2, 0, 1))   # [k, C_in, B]
    wt = np.ascontiguousarray(w.data.transpose(2, 1, 0))         # [k, C_out, C_in]
    yk = np.matmul(wt, xk)                                       # [k, C_out, B]
    y = np.zeros((c_out, b, m), dtype=np.complex128)
    y[:, :, :k] = yk.transpose(1, 2, 0)
    out = Tensor(y[:, 0, :] if was_2d else y)

    def vjp(g):
        gd, _ = _as_cbn(g)
        gk = np.ascontiguousarray(gd[:, :, :k].transpose(2, 0, 1))  # [k, C_out, B]
        gx = np.zeros((c_in, b, m), dtype=np.complex128)
        gx[:, :, :k] = np.matmul(wt.conj().transpose(0, 2, 1), gk).transpose(1, 2, 0)
        gw = np.matmul(gk, xk.conj().transpose(0, 2, 1))            # [k, C_out, C_in]
        gw = gw.transpose(2, 1, 0)
        if was_2d:
            gx = gx[:, 0, :]
        return gx, gw

    _record("complex_mode_multiply", out, (x, w), vjp)
    return out


# ---------------------------------------------------------------------------
# primitive registry

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul-elementwise": mul,
    "matmul": matmul,
    "conv1d-circular": conv1d_circular,
    "relu": relu,
    "complex-mode-multiply": complex_mode_multiply,
    "rfft": rfft,
    "irfft": irfft,
    "reduce-sum": reduce_sum,
    "reduce-mean": reduce_mean,
    "broadcast-over-time": broadcast_over_time,
    "affine": affine,
    "instance-norm": instance_norm,
    "scale": scale,
    "squeeze-channel": squeeze_channel,
}


def forward_primitive(op: str, *inputs, **kwargs) -> Tensor:
    """Apply a primitive by name; the result is recorded on the active tape."""
    if op not in PRIMITIVES:
        raise ValueError(f"unknown primitive {op!r}; "
                         f"expected one of {sorted(PRIMITIVES)}")
    return PRIMITIVES[op](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward pass

Gradients = dict[str, np.ndarray]


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Gradients of a scalar loss w.r.t. every trainable tensor on the tape."""
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        shape = getattr(getattr(loss, "data", None), "shape", None)
        raise TapeError(f"backward: loss must be a scalar tensor, got shape {shape}")
    produced = {id(node.out) for node in tape.nodes}
    if id(loss) not in produced:
        raise TapeError("backward: loss was not produced on this tape")

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = adjoint.get(id(node.out))
        if g is None:
            continue
        grads = node.vjp(g)
        for inp, gi in zip(node.inputs, grads):
            key = id(inp)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi

    result: Gradients = {}
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.trainable and inp.name not in result:
                g = adjoint.get(id(inp))
                if g is None:
                    g = np.zeros_like(inp.data)
                result[inp.name] = np.asarray(g).reshape(inp.shape)
    return result
