"""Feature engineering between physical waveforms and model-ready arrays.

One sample is a single excitation period: a B(t) sequence in tesla, an
optional H(t) sequence in A/m, a frequency in hertz, and a temperature in
Celsius.  The model consumes min-max scaled channels {B, dB/dt, t} plus
scalars {f, T, delta-B}; predictions are mapped back to physical H through
the same fitted scaler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURES = ("b", "h", "dbdt", "f", "temp", "delta_b")


@dataclass
class WaveformSample:
    b: np.ndarray             # tesla, one full period
    h: np.ndarray | None      # A/m, optional at inference
    f: float                  # hertz
    temp: float               # Celsius

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.h is not None:
            self.h = np.asarray(self.h, dtype=np.float64)
            if len(self.h) != len(self.b):
                raise ValueError(
                    f"sample: B has {len(self.b)} points but H has "
                    f"{len(self.h)}")
        if len(self.b) < 4:
            raise ValueError("sample: a period needs at least 4 points")
        if not self.f > 0:
            raise ValueError(f"sample: frequency must be positive, got {self.f}")


class ScalerError(ValueError):
    pass


@dataclass
class ScalerState:
    """Per-feature (min, max) extrema fitted on the training set.

    Features whose extrema coincide are flagged constant and scale to 0.
    """

    mins: dict[str, float] = field(default_factory=dict)
    maxs: dict[str, float] = field(default_factory=dict)
    constant: set[str] = field(default_factory=set)

    def scale(self, x, feature: str):
        lo, hi = self._range(feature)
        if feature in self.constant:
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def unscale(self, x, feature: str):
        lo, hi = self._range(feature)
        if feature in self.constant:
            return np.full_like(np.asarray(x, dtype=np.float64), lo)
        return (np.asarray(x, dtype=np.float64) + 1.0) * (hi - lo) / 2.0 + lo

    def _range(self, feature: str) -> tuple[float, float]:
        if feature not in self.mins:
            raise ScalerError(f"scaler has no fitted feature {feature!r}")
        return self.mins[feature], self.maxs[feature]

    def to_dict(self) -> dict:
        return {"mins": dict(self.mins), "maxs": dict(self.maxs),
                "constant": sorted(self.constant)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerState":
        return cls(mins=dict(d["mins"]), maxs=dict(d["maxs"]),
                   constant=set(d["constant"]))


def scaler_fit(samples) -> ScalerState:
    """Record per-feature extrema (including derived dB/dt and delta-B)."""
    samples = list(samples)
    if not samples:
        raise ScalerError("scaler_fit: empty training set")
    values = {k: [] for k in FEATURES}
    for s in samples:
        values["b"].append((s.b.min(), s.b.max()))
        if s.h is not None:
            values["h"].append((s.h.min(), s.h.max()))
        d = db_dt(s.b, s.f)
        values["dbdt"].append((d.min(), d.max()))
        values["f"].append((s.f, s.f))
        values["temp"].append((s.temp, s.temp))
        db = delta_b(s.b)
        values["delta_b"].append((db, db))
    state = ScalerState()
    for k, pairs in values.items():
        if not pairs:
            continue
        lo = min(p[0] for p in pairs)
        hi = max(p[1] for p in pairs)
        state.mins[k] = float(lo)
        state.maxs[k] = float(hi)
        if hi <= lo:
            state.constant.add(k)
    return state


def db_dt(b, f: float) -> np.ndarray:
    """Periodic central-difference derivative of one period, in tesla/second."""
    b = np.asarray(b, dtype=np.float64)
    n = len(b)
    if n < 3:
        raise ValueError("db_dt: need at least 3 points")
    if not f > 0:
        raise ValueError(f"db_dt: frequency must be positive, got {f}")
    dt = 1.0 / (f * n)
    return (np.roll(b, -1) - np.roll(b, 1)) / (2.0 * dt)


def delta_b(b) -> float:
    """Peak-to-peak flux excursion max(B) - min(B)."""
    b = np.asarray(b, dtype=np.float64)
    if b.size == 0:
        raise ValueError("delta_b: empty sequence")
    return float(b.max() - b.min())


def downsample_stride(x, n: int) -> np.ndarray:
    """Keep every s-th point with s = floor((L-1)/(n-1)); 1024 -> 205 uses s=5."""
    x = np.asarray(x)
    length = len(x)
    if n > length:
        raise ValueError(f"downsample_stride: target {n} exceeds length {length}")
    if n < 2:
        raise ValueError("downsample_stride: target must be >= 2")
    stride = (length - 1) // (n - 1)
    return x[:(n - 1) * stride + 1:stride].copy()


def resample_linear(x, m: int) -> np.ndarray:
    """Linear interpolation onto m evenly spaced points, endpoints preserved."""
    x = np.asarray(x, dtype=np.float64)
    length = len(x)
    if length < 2 or m < 2:
        raise ValueError(
            f"resample_linear: degenerate lengths {length} -> {m}")
    if m == length:
        return x.copy()
    pos = np.arange(m) * (length - 1) / (m - 1)
    return np.interp(pos, np.arange(length), x)


def preprocess(sample: WaveformSample, n: int,
               resample_to: int | None = None) -> WaveformSample:
    """Bring a sample to length n: optional linear resample, then stride."""
    b, h = sample.b, sample.h
    if resample_to and len(b) != resample_to:
        b = resample_linear(b, resample_to)
        h = resample_linear(h, resample_to) if h is not None else None
    if len(b) != n:
        b = downsample_stride(b, n)
        h = downsample_stride(h, n) if h is not None else None
    return WaveformSample(b=b, h=h, f=sample.f, temp=sample.temp)


@dataclass
class FeatureBundle:
    seq: np.ndarray           # [3, N] rows {B_norm, dBdt_norm, t} (2 rows without dB/dt)
    scalars: np.ndarray       # [3] = {f_norm, T_norm, delta_B_norm}
    scaler: ScalerState
    h_norm: np.ndarray | None = None  # normalized target when H is present


def time_channel(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.float64) / n


def make_bundle(sample: WaveformSample, scaler: ScalerState, n: int,
                include_dbdt: bool = True,
                resample_to: int | None = None) -> FeatureBundle:
    """Build normalized model inputs (and target, when H is present)."""
    s = preprocess(sample, n, resample_to)
    rows = [scaler.scale(s.b, "b")]
    if include_dbdt:
        rows.append(scaler.scale(db_dt(s.b, s.f), "dbdt"))
    rows.append(time_channel(n))
    seq = np.stack(rows)
    scalars = np.array([
        float(scaler.scale(s.f, "f")),
        float(scaler.scale(s.temp, "temp")),
        float(scaler.scale(delta_b(s.b), "delta_b")),
    ])
    h_norm = scaler.scale(s.h, "h") if s.h is not None else None
    return FeatureBundle(seq=seq, scalars=scalars, scaler=scaler, h_norm=h_norm)


def bundle_arrays(samples, scaler: ScalerState, n: int,
                  include_dbdt: bool = True,
                  resample_to: int | None = None):
    """Stack bundles for a whole set: (seq [S,C,N], scalars [S,3], targets [S,N])."""
    seqs, scals, targets = [], [], []
    for sample in samples:
        fb = make_bundle(sample, scaler, n, include_dbdt, resample_to)
        seqs.append(fb.seq)
        scals.append(fb.scalars)
        if fb.h_norm is not None:
            targets.append(fb.h_norm)
    seq_arr = np.stack(seqs)
    scal_arr = np.stack(scals)
    tgt_arr = np.stack(targets) if len(targets) == len(seqs) else None
    return seq_arr, scal_arr, tgt_arr
