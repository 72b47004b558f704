"""Pure-FNO and Res-FNO network assembly, forward pass, and checkpoints.

The network lifts the {B, dB/dt, t} sequence with a Conv1D, adds a broadcast
MLP encoding of the {f, T, delta-B} scalars, and feeds the fused tensor to
two parallel paths: a chain of FNO blocks (global operator path) and a chain
of residual blocks with per-block kernel sizes (local refinement path).  The
paths are summed, activated, and projected to the output sequence by a
pointwise MLP.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import ShapeError, Tensor, parameter
from .features import ScalerState
from .spectral import init_spectral_weights

VARIANTS = ("pure_fno", "res_fno", "res_fno_no_dbdt")

LIFT_KSIZE = 3        # receptive field of the input lift convolution
ENC_HIDDEN = 64       # hidden width of the scalar encoder MLP
HEAD_HIDDEN = 64      # hidden width of the output head MLP

CHECKPOINT_MAGIC = b"RESFNOCK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 64
    n_fno: int = 2
    modes: int = 48
    m_res: int = 2
    kernel_sizes: tuple[int, ...] = (5, 7)
    seq_len: int = 205
    variant: str = "res_fno"

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; "
                             f"expected one of {VARIANTS}")
        if min(self.d_model, self.n_fno, self.seq_len) < 1 or self.modes < 1:
            raise ValueError("d_model, n_fno, modes and seq_len must be >= 1")
        if self.modes > self.seq_len // 2 + 1:
            raise ValueError(
                f"{self.modes} modes exceed the {self.seq_len // 2 + 1} "
                f"available at length {self.seq_len}")
        if len(self.kernel_sizes) != self.m_res:
            raise ValueError(
                f"{self.m_res} residual blocks need {self.m_res} kernel "
                f"sizes, got {self.kernel_sizes}")
        for k in self.kernel_sizes:
            if k % 2 == 0 or k < 1 or k > self.seq_len:
                raise ValueError(f"kernel size {k} must be odd and <= seq_len")

    @property
    def in_channels(self) -> int:
        return 2 if self.variant == "res_fno_no_dbdt" else 3

    @property
    def uses_res_path(self) -> bool:
        return self.variant != "pure_fno"

    def to_dict(self) -> dict:
        return {"d_model": self.d_model, "n_fno": self.n_fno,
                "modes": self.modes, "m_res": self.m_res,
                "kernel_sizes": list(self.kernel_sizes),
                "seq_len": self.seq_len, "variant": self.variant}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(d_model=int(d["d_model"]), n_fno=int(d["n_fno"]),
                   modes=int(d["modes"]), m_res=int(d["m_res"]),
                   kernel_sizes=tuple(d["kernel_sizes"]),
                   seq_len=int(d["seq_len"]), variant=str(d["variant"]))


@dataclass
class ModelParams:
    config: ModelConfig
    lift: layers.Conv1dParams
    scalar_enc: layers.MlpParams
    fno_blocks: list[layers.FnoBlockParams]
    res_blocks: list[layers.ResBlockParams]
    head: layers.MlpParams

    def named_parameters(self):
        yield "lift.kernel", self.lift.kernel
        yield "lift.bias", self.lift.bias
        for i, (w, b) in enumerate(zip(self.scalar_enc.weights,
                                       self.scalar_enc.biases)):
            yield f"scalar_enc.w{i}", w
            yield f"scalar_enc.b{i}", b
        for i, fb in enumerate(self.fno_blocks):
            yield f"fno{i}.spectral", fb.spectral.weights
            yield f"fno{i}.pointwise.kernel", fb.pointwise.kernel
            yield f"fno{i}.pointwise.bias", fb.pointwise.bias
        for i, rb in enumerate(self.res_blocks):
            yield f"res{i}.conv1.kernel", rb.conv1.kernel
            yield f"res{i}.conv1.bias", rb.conv1.bias
            yield f"res{i}.norm1.gain", rb.norm1_gain
            yield f"res{i}.norm1.shift", rb.norm1_shift
            yield f"res{i}.conv2.kernel", rb.conv2.kernel
            yield f"res{i}.conv2.bias", rb.conv2.bias
            yield f"res{i}.norm2.gain", rb.norm2_gain
            yield f"res{i}.norm2.shift", rb.norm2_shift
        for i, (w, b) in enumerate(zip(self.head.weights, self.head.biases)):
            yield f"head.w{i}", w
            yield f"head.b{i}", b

    def n_parameters(self) -> int:
        """Real degrees of freedom (a complex entry counts as two)."""
        total = 0
        for _, p in self.named_parameters():
            total += p.data.size * (2 if p.is_complex else 1)
        return total

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            p.data[...] = snap[name]


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form real-parameter count for a configuration."""
    d, c = cfg.d_model, cfg.in_channels
    total = d * c * LIFT_KSIZE + d                          # lift
    total += ENC_HIDDEN * 3 + ENC_HIDDEN + d * ENC_HIDDEN + d   # scalar encoder
    total += cfg.n_fno * (2 * d * d * cfg.modes + d * d + d)    # fno blocks
    if cfg.uses_res_path:
        for k in cfg.kernel_sizes:
            total += 2 * (d * d * k + d) + 4 * d                # convs + norms
    total += HEAD_HIDDEN * d + HEAD_HIDDEN + HEAD_HIDDEN + 1    # head
    return total


def build(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministically initialize all parameters for a configuration."""
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.d_model
    lift = layers.init_conv1d(d, config.in_channels, LIFT_KSIZE, rng, "lift")
    enc = layers.init_mlp([3, ENC_HIDDEN, d], rng, "scalar_enc")
    fno_blocks = []
    for i in range(config.n_fno):
        spectral = init_spectral_weights(d, d, config.modes, rng,
                                         f"fno{i}.spectral")
        pointwise = layers.init_conv1d(d, d, 1, rng, f"fno{i}.pointwise")
        fno_blocks.append(layers.FnoBlockParams(spectral=spectral,
                                                pointwise=pointwise))
    res_blocks = []
    if config.uses_res_path:
        for i, k in enumerate(config.kernel_sizes):
            res_blocks.append(layers.ResBlockParams(
                conv1=layers.init_conv1d(d, d, k, rng, f"res{i}.conv1"),
                norm1_gain=parameter(np.ones(d), f"res{i}.norm1.gain"),
                norm1_shift=parameter(np.zeros(d), f"res{i}.norm1.shift"),
                conv2=layers.init_conv1d(d, d, k, rng, f"res{i}.conv2"),
                norm2_gain=parameter(np.ones(d), f"res{i}.norm2.gain"),
                norm2_shift=parameter(np.zeros(d), f"res{i}.norm2.shift"),
            ))
    head = layers.init_mlp([d, HEAD_HIDDEN, 1], rng, "head")
    params = ModelParams(config=config, lift=lift, scalar_enc=enc,
                         fno_blocks=fno_blocks, res_blocks=res_blocks,
                         head=head)
    assert params.n_parameters() == expected_parameter_count(config)
    return params


def forward(params: ModelParams, seq, scalars,
            intermediates: dict | None = None) -> Tensor:
    """Predict the normalized H sequence.

    seq: [C, N] with scalars [3] for one sample (returns [N]), or
    [B, C, N] with scalars [B, 3] for a batch (returns [B, N]).
    """
    cfg = params.config
    seq = np.asarray(seq, dtype=np.float64)
    scalars = np.asarray(scalars, dtype=np.float64)
    batched = seq.ndim == 3
    if batched:
        if seq.shape[1] != cfg.in_channels or seq.shape[2] != cfg.seq_len:
            raise ShapeError(
                f"forward: batch shape {seq.shape} does not match "
                f"[B, {cfg.in_channels}, {cfg.seq_len}]")
        if scalars.ndim != 2 or scalars.shape != (seq.shape[0], 3):
            raise ShapeError(
                f"forward: scalar shape {scalars.shape} does not match "
                f"[{seq.shape[0]}, 3]")
        seq = np.ascontiguousarray(seq.transpose(1, 0, 2))   # [C, B, N]
        scalars = np.ascontiguousarray(scalars.T)            # [3, B]
    else:
        if seq.shape != (cfg.in_channels, cfg.seq_len):
            raise ShapeError(
                f"forward: sequence shape {seq.shape} does not match "
                f"[{cfg.in_channels}, {cfg.seq_len}]")
        if scalars.shape != (3,):
            raise ShapeError(
                f"forward: scalar shape {scalars.shape} does not match [3]")

    x_fused = layers.fuse_inputs(seq, scalars, params.lift, params.scalar_enc)
    x = x_fused
    for fb in params.fno_blocks:
        x = layers.fno_block(x, fb)
    x_fno = x

    if cfg.uses_res_path:
        r = x_fused
        for rb in params.res_blocks:
            r = layers.res_block(r, rb)
        x_res = r
        fused_out = ad.relu(ad.add(x_fno, x_res))
    else:
        x_res = None
        fused_out = x_fno

    if intermediates is not None:
        intermediates.update(fno_path_input=x_fused, res_path_input=x_fused,
                             x_fused=x_fused, x_fno=x_fno, x_res=x_res)
    return layers.output_head(fused_out, params.head)


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, JSON header, raw little-endian buffers


def _dtype_tag(arr: np.ndarray) -> str:
    return "c16" if arr.dtype == np.complex128 else "f8"


def save_checkpoint(path, params: ModelParams,
                    scaler: ScalerState | None = None) -> None:
    tensors = []
    buffers = []
    for name, p in params.named_parameters():
        arr = p.data
        tensors.append({"name": name, "dtype": _dtype_tag(arr),
                        "shape": list(arr.shape)})
        buffers.append(arr.astype("<" + _dtype_tag(arr)).tobytes(order="C"))
    header = {
        "config": params.config.to_dict(),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path) -> tuple[ModelParams, ScalerState | None]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        version, blob_len = struct.unpack("<HQ", fh.read(10))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        arrays = {}
        native = {"f8": np.float64, "c16": np.complex128}
        for spec in header["tensors"]:
            dt = np.dtype("<" + spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            raw = fh.read(count * dt.itemsize)
            arrays[spec["name"]] = np.frombuffer(raw, dtype=dt).reshape(
                spec["shape"]).astype(native[spec["dtype"]], copy=True)
    config = ModelConfig.from_dict(header["config"])
    params = build(config, seed=0)
    params.load_snapshot(arrays)
    scaler = (ScalerState.from_dict(header["scaler"])
              if header["scaler"] is not None else None)
    return params, scaler
