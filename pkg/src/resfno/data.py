"""Dataset loading, splitting, and the synthetic hysteresis corpus.

CSV layout: four headerless files in one directory, one sample per row.
`b` and `h` hold one waveform per row (rows may differ in length between
samples, but B and H of the same sample must match); `f` and `t` hold one
scalar per row.

The synthetic generator is a hysteron stack plus a rate term and damped
ringing bursts: H(t) = sum_j w_j * relay_j(B(t)) + c_e * dB/dt
+ sum_events A * exp(-lambda*(t-t_e)) * sin(omega*(t-t_e)).  Each relay
switches to +1 once B exceeds +theta_j and to -1 once B falls below
-theta_j; states settle during a one-period warm-up sweep so recorded
periods are in periodic steady state.  Events fire where the step change
in dB/dt exceeds a trigger fraction of the sample's peak |dB/dt| (waveform
corners).  A variant adds the damped oscillation to B itself instead,
producing minor loops.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import WaveformSample, db_dt

DEFAULT_FILENAMES = {"b": "b.csv", "h": "h.csv", "f": "f.csv", "t": "t.csv"}

WAVEFORMS = ("sine", "triangle", "trapezoid")
TRAPEZOID_RISE = 0.15  # rise/fall fraction of the period


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    samples: list[WaveformSample]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> WaveformSample:
        return self.samples[i]


@dataclass
class SynthConfig:
    n_samples: int = 200
    seq_len: int = 205
    mix_sine: float = 0.2
    mix_triangle: float = 0.3
    mix_trapezoid: float = 0.5
    amp_range: tuple[float, float] = (0.05, 0.3)
    freq_range: tuple[float, float] = (50e3, 800e3)
    temp_range: tuple[float, float] = (25.0, 90.0)
    hysteron_thresholds: tuple[float, ...] = (0.01, 0.02, 0.03, 0.05, 0.08)
    hysteron_weights: tuple[float, ...] = (18.0, 15.0, 12.0, 8.0, 5.0)
    eddy_coeff: float = 1e-6          # A/m per T/s
    ring_amp: float = 8.0             # A/m per ringing burst
    ring_decay: float = 1.5e6         # 1/s
    ring_omega: float = 2 * math.pi * 2e6  # rad/s
    ring_trigger: float = 0.35        # fraction of peak |dB/dt| that fires a burst
    b_osc_amp: float = 0.0            # tesla; > 0 rings B itself (minor loops)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_samples < 1:
            raise DataError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.seq_len < 8:
            raise DataError(f"seq_len must be >= 8, got {self.seq_len}")
        mix = (self.mix_sine, self.mix_triangle, self.mix_trapezoid)
        if min(mix) < 0 or sum(mix) <= 0:
            raise DataError(f"waveform mix weights invalid: {mix}")
        for name, (lo, hi) in (("amp", self.amp_range),
                               ("freq", self.freq_range),
                               ("temp", self.temp_range)):
            if not (lo <= hi) or (name != "temp" and lo <= 0):
                raise DataError(f"{name}_range invalid: {(lo, hi)}")
        if len(self.hysteron_thresholds) != len(self.hysteron_weights):
            raise DataError("hysteron thresholds and weights must pair up")
        if any(t <= 0 for t in self.hysteron_thresholds):
            raise DataError("hysteron thresholds must be positive")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples, "seq_len": self.seq_len,
            "mix_sine": self.mix_sine, "mix_triangle": self.mix_triangle,
            "mix_trapezoid": self.mix_trapezoid,
            "amp_range": list(self.amp_range),
            "freq_range": list(self.freq_range),
            "temp_range": list(self.temp_range),
            "hysteron_thresholds": list(self.hysteron_thresholds),
            "hysteron_weights": list(self.hysteron_weights),
            "eddy_coeff": self.eddy_coeff, "ring_amp": self.ring_amp,
            "ring_decay": self.ring_decay, "ring_omega": self.ring_omega,
            "ring_trigger": self.ring_trigger, "b_osc_amp": self.b_osc_amp,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# CSV loading / writing


def _read_rows(path: Path) -> list[list[float]]:
    if not path.exists():
        raise DataError(f"{path}: file not found")
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            values = []
            for c, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {r + 1}, "
                        f"column {c + 1}") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: file is empty")
    return rows


def load_csv_dir(path, filenames: dict[str, str] | None = None) -> Dataset:
    """Load a {b, h, f, t} CSV directory into a Dataset."""
    base = Path(path)
    names = dict(DEFAULT_FILENAMES)
    if filenames:
        names.update(filenames)
    rows = {key: _read_rows(base / names[key]) for key in ("b", "h", "f", "t")}
    counts = {key: len(v) for key, v in rows.items()}
    keys = list(counts)
    for a, b in zip(keys, keys[1:]):
        if counts[a] != counts[b]:
            raise DataError(
                f"row count mismatch: {names[a]} has {counts[a]} rows but "
                f"{names[b]} has {counts[b]}")
    samples = []
    for i in range(counts["b"]):
        b_row = np.asarray(rows["b"][i])
        h_row = np.asarray(rows["h"][i])
        if len(b_row) != len(h_row):
            raise DataError(
                f"sample {i}: {names['b']} row has {len(b_row)} points but "
                f"{names['h']} row has {len(h_row)}")
        for key in ("f", "t"):
            if len(rows[key][i]) != 1:
                raise DataError(
                    f"{names[key]}: expected one scalar per row, row {i + 1} "
                    f"has {len(rows[key][i])}")
        f = rows["f"][i][0]
        temp = rows["t"][i][0]
        if not (np.isfinite(f) and f > 0):
            raise DataError(f"sample {i}: frequency {f} must be positive")
        if not (np.isfinite(temp) and temp > 0):
            raise DataError(f"sample {i}: temperature {temp} must be positive")
        samples.append(WaveformSample(b=b_row, h=h_row, f=f, temp=temp))
    return Dataset(samples=samples, provenance=str(base))


def write_csv_dir(dataset: Dataset, path,
                  filenames: dict[str, str] | None = None) -> None:
    """Write a Dataset as the four CSV files (full float precision)."""
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    names = dict(DEFAULT_FILENAMES)
    if filenames:
        names.update(filenames)

    def fmt(v: float) -> str:
        return repr(float(v))

    with open(base / names["b"], "w") as fb, open(base / names["h"], "w") as fh_, \
            open(base / names["f"], "w") as ff, open(base / names["t"], "w") as ft:
        for s in dataset.samples:
            fb.write(",".join(fmt(v) for v in s.b) + "\n")
            h = s.h if s.h is not None else np.zeros_like(s.b)
            fh_.write(",".join(fmt(v) for v in h) + "\n")
            ff.write(fmt(s.f) + "\n")
            ft.write(fmt(s.temp) + "\n")


def split_train_val(d: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; sizes floor/ceil to sum to len(d)."""
    if len(d) < 2:
        raise DataError(f"cannot split a dataset of {len(d)} samples")
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    perm = np.random.default_rng(seed).permutation(len(d))
    n_train = min(max(int(ratio * len(d)), 1), len(d) - 1)
    train = Dataset([d.samples[i] for i in perm[:n_train]],
                    provenance=f"{d.provenance}[train]")
    val = Dataset([d.samples[i] for i in perm[n_train:]],
                  provenance=f"{d.provenance}[val]")
    return train, val


# ---------------------------------------------------------------------------
# synthetic generation


def _base_waveform(kind: str, amp: float, n: int) -> np.ndarray:
    phase = np.arange(n) / n
    if kind == "sine":
        return amp * np.sin(2 * np.pi * phase)
    if kind == "triangle":
        b = np.empty(n)
        up = phase < 0.25
        mid = (phase >= 0.25) & (phase < 0.75)
        b[up] = 4 * amp * phase[up]
        b[mid] = amp * (2 - 4 * phase[mid])
        b[~up & ~mid] = 4 * amp * (phase[~up & ~mid] - 1)
        return b
    if kind == "trapezoid":
        r = TRAPEZOID_RISE
        b = np.empty(n)
        seg1 = phase < r
        seg2 = (phase >= r) & (phase < 0.5)
        seg3 = (phase >= 0.5) & (phase < 0.5 + r)
        seg4 = phase >= 0.5 + r
        b[seg1] = -amp + 2 * amp * phase[seg1] / r
        b[seg2] = amp
        b[seg3] = amp - 2 * amp * (phase[seg3] - 0.5) / r
        b[seg4] = -amp
        return b
    raise DataError(f"unknown waveform kind {kind!r}")


def relay_response(b: np.ndarray, thresholds, weights) -> np.ndarray:
    """Weighted two-state hysteron stack, warm-started over one extra period."""
    n = len(b)
    b2 = np.concatenate([b, b])  # warm-up sweep then recorded period
    out = np.zeros(2 * n)
    steps = np.arange(2 * n)
    for theta, w in zip(thresholds, weights):
        mark = np.where(b2 > theta, 1.0, np.where(b2 < -theta, -1.0, 0.0))
        decisive = np.where(mark != 0, steps, -1)
        last = np.maximum.accumulate(decisive)
        state = np.where(last >= 0, mark[np.maximum(last, 0)], -1.0)
        out += w * state
    return out[n:]


def _ring_events(b: np.ndarray, f: float, trigger: float) -> np.ndarray:
    """Indices where the step change of dB/dt exceeds trigger * peak |dB/dt|."""
    d = db_dt(b, f)
    jump = np.abs(d - np.roll(d, 1))
    level = trigger * np.max(np.abs(d))
    if level <= 0:
        return np.empty(0, dtype=int)
    return np.flatnonzero(jump > level)


def _damped_bursts(n: int, f: float, events: np.ndarray, amp: float,
                   decay: float, omega: float) -> np.ndarray:
    """Sum of one-sided decaying oscillations started at each event index."""
    out = np.zeros(n)
    if amp == 0.0 or len(events) == 0:
        return out
    t = np.arange(n) / (f * n)
    for e in events:
        tau = t[e:] - t[e]
        out[e:] += amp * np.exp(-decay * tau) * np.sin(omega * tau)
    return out


def synth_sample(kind: str, amp: float, f: float, temp: float,
                 c: SynthConfig) -> WaveformSample:
    """Generate one steady-state period for the given operating point."""
    base = _base_waveform(kind, amp, c.seq_len)
    events = _ring_events(base, f, c.ring_trigger)
    b = base
    if c.b_osc_amp > 0:
        b = base + _damped_bursts(c.seq_len, f, events, c.b_osc_amp,
                                  c.ring_decay, c.ring_omega)
    h = relay_response(b, c.hysteron_thresholds, c.hysteron_weights)
    h = h + c.eddy_coeff * db_dt(b, f)
    h = h + _damped_bursts(c.seq_len, f, events, c.ring_amp,
                           c.ring_decay, c.ring_omega)
    return WaveformSample(b=b, h=h, f=f, temp=temp)


def synth_generate(c: SynthConfig) -> Dataset:
    """Deterministic synthetic corpus: (config, seed) fixes every byte."""
    c.validate()
    rng = np.random.default_rng(c.seed)
    mix = np.array([c.mix_sine, c.mix_triangle, c.mix_trapezoid], dtype=float)
    mix = mix / mix.sum()
    cum = np.cumsum(mix)
    samples = []
    for _ in range(c.n_samples):
        u = rng.random()
        kind = WAVEFORMS[min(int(np.searchsorted(cum, u, side="right")), 2)]
        amp = rng.uniform(*c.amp_range)
        f = rng.uniform(*c.freq_range)
        temp = rng.uniform(*c.temp_range)
        samples.append(synth_sample(kind, amp, f, temp, c))
    return Dataset(samples=samples, provenance=f"synthetic(seed={c.seed})")
