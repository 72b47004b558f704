"""Per-sample error metrics, core-loss integration, and aggregate reports.

NRMSE is the RMS pointwise error normalized by the peak |H| of the measured
sequence, in percent.  R-squared compares the residual sum of squares with
the variance of the measured sequence, in percent.  Core-loss density is the
frequency times the signed area enclosed by one period of the B-H loop,
oriented so that loops traversed with H switching after B (the dissipative
direction for relay-type hysteresis) integrate positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as M
from .features import ScalerState, make_bundle, preprocess


class MetricError(ValueError):
    pass


def nrmse(h, h_hat) -> float:
    """Peak-normalized RMS error, percent."""
    h = np.asarray(h, dtype=np.float64)
    h_hat = np.asarray(h_hat, dtype=np.float64)
    if h.shape != h_hat.shape or h.size == 0:
        raise MetricError(
            f"nrmse: shapes {h.shape} and {h_hat.shape} must match and be "
            "nonempty")
    peak = np.max(np.abs(h))
    if peak == 0:
        raise MetricError("nrmse: measured sequence is identically zero")
    return float(np.sqrt(np.mean((h - h_hat) ** 2)) / peak * 100.0)


def r_squared(h, h_hat) -> float:
    """Coefficient of determination, percent; negative for poor fits."""
    h = np.asarray(h, dtype=np.float64)
    h_hat = np.asarray(h_hat, dtype=np.float64)
    if h.shape != h_hat.shape or h.size < 2:
        raise MetricError(
            f"r_squared: shapes {h.shape} and {h_hat.shape} must match with "
            ">= 2 points")
    ss_tot = float(np.sum((h - h.mean()) ** 2))
    if ss_tot == 0:
        raise MetricError("r_squared: measured sequence is constant")
    ss_res = float(np.sum((h - h_hat) ** 2))
    return (1.0 - ss_res / ss_tot) * 100.0


def core_loss_density(b, h, f: float) -> float:
    """f times the closed-contour loop area, in W/m^3.

    Trapezoidal closed-contour integral over one period; the sign convention
    makes relay-style hysteresis loops (H transitions lagging B) positive,
    and reversing the traversal order flips the sign exactly.
    """
    b = np.asarray(b, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if b.shape != h.shape or b.size < 3:
        raise MetricError(
            f"core_loss_density: shapes {b.shape} and {h.shape} must match "
            "with >= 3 points")
    dh = (np.roll(h, -1) - np.roll(h, 1)) / 2.0
    return float(f * np.dot(b, dh))


@dataclass
class EvalReport:
    nrmse_pct: list[float]
    r2_pct: list[float]
    core_loss_pred: list[float] | None
    core_loss_meas: list[float] | None
    flagged: list[tuple[int, str]]
    aggregates: dict[str, float]
    histogram_edges: np.ndarray  # left edges plus final right edge (bins+1)
    histogram_counts: np.ndarray

    @property
    def n_evaluated(self) -> int:
        return len(self.nrmse_pct) - len(self.flagged)


def _aggregate(values: np.ndarray, prefix: str) -> dict[str, float]:
    return {
        f"{prefix}_mean": float(np.mean(values)),
        f"{prefix}_median": float(np.median(values)),
        f"{prefix}_p95": float(np.percentile(values, 95)),
    }


def nrmse_histogram(values: np.ndarray, bins: int):
    """Uniform-bin histogram over the observed range, widened when the
    observed spread is too narrow to carve into finite bins."""
    if len(values) == 0:
        return np.zeros(bins, dtype=int), np.linspace(0.0, 1.0, bins + 1)
    lo, hi = float(np.min(values)), float(np.max(values))
    min_spread = np.spacing(max(abs(lo), abs(hi), 1.0)) * bins * 4
    if hi - lo < min_spread:
        hi = lo + 1.0
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return counts, edges


def build_report(samples, predictions, with_core_loss: bool = True,
                 bins: int = 50) -> EvalReport:
    """Metrics for physical-unit predictions against measured samples."""
    nrmse_pct: list[float] = []
    r2_pct: list[float] = []
    clp: list[float] = []
    clm: list[float] = []
    flagged: list[tuple[int, str]] = []
    for i, (s, pred) in enumerate(zip(samples, predictions)):
        try:
            nrmse_pct.append(nrmse(s.h, pred))
            r2_pct.append(r_squared(s.h, pred))
        except MetricError as err:
            nrmse_pct.append(float("nan"))
            r2_pct.append(float("nan"))
            flagged.append((i, str(err)))
            if with_core_loss:
                clp.append(float("nan"))
                clm.append(float("nan"))
            continue
        if with_core_loss:
            clp.append(core_loss_density(s.b, pred, s.f))
            clm.append(core_loss_density(s.b, s.h, s.f))

    ok = np.array([i for i in range(len(nrmse_pct))
                   if not np.isnan(nrmse_pct[i])], dtype=int)
    nr = np.array(nrmse_pct)[ok]
    r2 = np.array(r2_pct)[ok]
    aggregates = {}
    if len(ok):
        aggregates.update(_aggregate(nr, "nrmse"))
        aggregates.update(_aggregate(r2, "r2"))
    aggregates["n_samples"] = len(nrmse_pct)
    aggregates["n_flagged"] = len(flagged)
    counts, edges = nrmse_histogram(nr, bins)
    return EvalReport(
        nrmse_pct=nrmse_pct, r2_pct=r2_pct,
        core_loss_pred=clp if with_core_loss else None,
        core_loss_meas=clm if with_core_loss else None,
        flagged=flagged, aggregates=aggregates,
        histogram_edges=edges, histogram_counts=counts)


def predict(params: M.ModelParams, samples, scaler: ScalerState,
            resample_to: int | None = None, chunk: int = 128):
    """Physical-unit H predictions for a list of samples."""
    cfg = params.config
    include_dbdt = cfg.variant != "res_fno_no_dbdt"
    seqs, scals = [], []
    for s in samples:
        fb = make_bundle(s, scaler, cfg.seq_len, include_dbdt, resample_to)
        seqs.append(fb.seq)
        scals.append(fb.scalars)
    seq_arr = np.stack(seqs)
    scal_arr = np.stack(scals)
    preds = []
    for lo in range(0, len(seq_arr), chunk):
        hi = min(lo + chunk, len(seq_arr))
        out = M.forward(params, seq_arr[lo:hi], scal_arr[lo:hi]).data
        for row in out:
            preds.append(scaler.unscale(row, "h"))
    return preds


def evaluate(params: M.ModelParams, test_set, scaler: ScalerState,
             resample_to: int | None = None, with_core_loss: bool = True,
             bins: int = 50) -> EvalReport:
    """Full evaluation: preprocess, predict, un-scale, and aggregate.

    Samples must carry measured H; metric failures (for example a constant
    measured sequence) flag the sample and exclude it from aggregates.
    """
    cfg = params.config
    samples = [preprocess(s, cfg.seq_len, resample_to) for s in test_set]
    predictions = predict(params, samples, scaler)
    return build_report(samples, predictions, with_core_loss, bins)


# ---------------------------------------------------------------------------
# report emission


def _fmt(v: float) -> str:
    return repr(float(v))


def write_per_sample_csv(report: EvalReport, path) -> None:
    flag_reason = dict(report.flagged)
    with open(path, "w") as fh:
        fh.write("index,nrmse_pct,r2_pct,core_loss_pred,core_loss_meas,flag\n")
        for i in range(len(report.nrmse_pct)):
            clp = report.core_loss_pred[i] if report.core_loss_pred else ""
            clm = report.core_loss_meas[i] if report.core_loss_meas else ""
            fh.write(",".join([
                str(i),
                _fmt(report.nrmse_pct[i]),
                _fmt(report.r2_pct[i]),
                _fmt(clp) if clp != "" else "",
                _fmt(clm) if clm != "" else "",
                flag_reason.get(i, "").replace(",", ";"),
            ]) + "\n")


def write_summary_json(report: EvalReport, path) -> None:
    payload = {"aggregates": report.aggregates,
               "flagged": [{"index": i, "reason": r}
                           for i, r in report.flagged]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("bin_left,count\n")
        for left, count in zip(report.histogram_edges[:-1],
                               report.histogram_counts):
            fh.write(f"{_fmt(left)},{int(count)}\n")


def write_histogram_svg(report: EvalReport, path, title: str = "NRMSE (%)") -> None:
    """Dependency-free bar chart of the NRMSE distribution."""
    width, height, pad = 640, 400, 48
    counts = report.histogram_counts
    edges = report.histogram_edges
    peak = max(int(counts.max()), 1) if len(counts) else 1
    n = len(counts)
    bar_w = (width - 2 * pad) / max(n, 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for i, count in enumerate(counts):
        h = (height - 2 * pad) * (int(count) / peak)
        x = pad + i * bar_w
        y = height - pad - h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w * 0.92:.2f}" '
            f'height="{h:.2f}" fill="#4477aa"/>')
    axis_y = height - pad
    parts.append(
        f'<line x1="{pad}" y1="{axis_y}" x2="{width - pad}" y2="{axis_y}" '
        'stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        idx = int(frac * n) if n else 0
        value = edges[min(idx, len(edges) - 1)]
        x = pad + frac * (width - 2 * pad)
        parts.append(
            f'<text x="{x:.1f}" y="{axis_y + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{value:.2f}</text>')
    parts.append(f'<text x="12" y="{pad}" font-family="sans-serif" '
                 f'font-size="11">max {peak}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def write_predictions_csv(predictions, path) -> None:
    with open(path, "w") as fh:
        for row in predictions:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
