"""Command-line entry point.

Commands: synth | train | eval | ablate | report.  Every configuration key
has a default, can be set in a flat key=value config file (--config), and is
mirrored one-to-one by a command-line flag that wins over the file.  Reruns
with fixed seeds produce byte-identical outputs; wall-clock timestamps appear
only in each run's manifest.json.

The RESFNO_THREADS environment variable caps the BLAS thread pool; the
package __init__ bridges it to the BLAS env vars before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

# key: (python type, default, help)
SCHEMA: dict[str, tuple] = {
    # model
    "variant": (str, "res_fno", "pure_fno | res_fno | res_fno_no_dbdt"),
    "d_model": (int, 64, "hidden channel width"),
    "n_fno": (int, 2, "number of FNO blocks"),
    "modes": (int, 48, "retained Fourier modes"),
    "m_res": (int, 2, "number of residual blocks"),
    "kernel_sizes": ("intlist", (5, 7), "per-block kernel sizes, comma separated"),
    "seq_len": (int, 205, "model sequence length N"),
    "resample_to": (int, 0, "linear-resample raw waveforms to this length first (0 = off)"),
    # training
    "split_ratio": (float, 0.9, "train share of the train/validation split"),
    "max_epochs": (int, 300, "epoch budget"),
    "batch_size": (int, 32, "mini-batch size"),
    "learning_rate": (float, 1e-3, "step size"),
    "beta1": (float, 0.9, "first-moment decay"),
    "beta2": (float, 0.999, "second-moment decay"),
    "epsilon": (float, 1e-8, "optimizer denominator floor"),
    "patience": (int, 100, "early-stopping patience, epochs"),
    "min_delta": (float, 1e-6, "improvement threshold for early stopping"),
    # synthetic data
    "n_samples": (int, 200, "synthetic samples to generate"),
    "mix_sine": (float, 0.2, "sine weight in the waveform mix"),
    "mix_triangle": (float, 0.3, "triangle weight in the waveform mix"),
    "mix_trapezoid": (float, 0.5, "trapezoid weight in the waveform mix"),
    "amp_min": (float, 0.05, "min flux amplitude, T"),
    "amp_max": (float, 0.3, "max flux amplitude, T"),
    "freq_min": (float, 50e3, "min frequency, Hz"),
    "freq_max": (float, 800e3, "max frequency, Hz"),
    "temp_min": (float, 25.0, "min temperature, C"),
    "temp_max": (float, 90.0, "max temperature, C"),
    "hysteron_thresholds": ("floatlist", (0.01, 0.02, 0.03, 0.05, 0.08),
                            "relay switching thresholds, T"),
    "hysteron_weights": ("floatlist", (18.0, 15.0, 12.0, 8.0, 5.0),
                         "relay output weights, A/m"),
    "eddy_coeff": (float, 1e-6, "rate-term coefficient, A/m per T/s"),
    "ring_amp": (float, 8.0, "ringing burst amplitude, A/m"),
    "ring_decay": (float, 1.5e6, "ringing decay rate, 1/s"),
    "ring_omega": (float, 1.2566370614359172e7, "ringing angular frequency, rad/s"),
    "ring_trigger": (float, 0.35, "slope-jump trigger, fraction of peak |dB/dt|"),
    "b_osc_amp": (float, 0.0, "oscillation injected into B, T (minor-loop variant)"),
    # evaluation / reporting
    "checkpoint": (str, "", "checkpoint path (default: <out>/model.ckpt)"),
    "test_data": (str, "", "held-out CSV directory (ablate/eval)"),
    "test_ratio": (float, 0.3, "test share carved from --data when test_data is unset"),
    "save_predictions": (int, 0, "also write predictions.csv (0/1)"),
    "bins": (int, 50, "NRMSE histogram bins"),
    # housekeeping
    "seed": (int, 0, "master seed"),
    "out": (str, "out", "output directory"),
    "data": (str, "", "input data directory (or report input)"),
}

COMMANDS = ("synth", "train", "eval", "ablate", "report")

REFERENCE_NRMSE = {"pure_fno": 2.19, "res_fno_no_dbdt": 2.00, "res_fno": 1.87}
REFERENCE_R2 = {"pure_fno": 99.79, "res_fno_no_dbdt": 99.83, "res_fno": 99.86}


class CliError(Exception):
    pass


def _parse_value(key: str, raw: str):
    kind = SCHEMA[key][0]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == "intlist":
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        if kind == "floatlist":
            return tuple(float(v) for v in raw.split(",") if v.strip() != "")
    except ValueError:
        raise CliError(f"config key {key!r}: cannot parse {raw!r}") from None
    raise CliError(f"config key {key!r}: unknown kind {kind!r}")


def load_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw.strip())
    return values


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = {key: spec[1] for key, spec in SCHEMA.items()}
    if args.config:
        cfg.update(load_config_file(args.config))
    for key in SCHEMA:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = _parse_value(key, flag) if isinstance(flag, str) else flag
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resfno",
        description="Sequence-to-sequence B-H hysteresis modeling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        for key, (kind, default, help_text) in SCHEMA.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None,
                           help=f"{help_text} (default: {default})")
    return parser


def _manifest(out: Path, command: str, cfg: dict) -> None:
    payload = {
        "command": command,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in sorted(cfg.items())},
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _synth_config(cfg: dict):
    from .data import SynthConfig
    return SynthConfig(
        n_samples=cfg["n_samples"], seq_len=cfg["seq_len"],
        mix_sine=cfg["mix_sine"], mix_triangle=cfg["mix_triangle"],
        mix_trapezoid=cfg["mix_trapezoid"],
        amp_range=(cfg["amp_min"], cfg["amp_max"]),
        freq_range=(cfg["freq_min"], cfg["freq_max"]),
        temp_range=(cfg["temp_min"], cfg["temp_max"]),
        hysteron_thresholds=tuple(cfg["hysteron_thresholds"]),
        hysteron_weights=tuple(cfg["hysteron_weights"]),
        eddy_coeff=cfg["eddy_coeff"], ring_amp=cfg["ring_amp"],
        ring_decay=cfg["ring_decay"], ring_omega=cfg["ring_omega"],
        ring_trigger=cfg["ring_trigger"], b_osc_amp=cfg["b_osc_amp"],
        seed=cfg["seed"])


def _model_config(cfg: dict, variant: str | None = None):
    from .model import ModelConfig
    return ModelConfig(
        d_model=cfg["d_model"], n_fno=cfg["n_fno"], modes=cfg["modes"],
        m_res=cfg["m_res"], kernel_sizes=tuple(cfg["kernel_sizes"]),
        seq_len=cfg["seq_len"], variant=variant or cfg["variant"])


def _resample(cfg: dict) -> int | None:
    return cfg["resample_to"] or None


def cmd_synth(cfg: dict) -> int:
    from .data import synth_generate, write_csv_dir
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = synth_generate(_synth_config(cfg))
    write_csv_dir(dataset, out)
    _manifest(out, "synth", cfg)
    print(f"synth: wrote {len(dataset)} samples of length "
          f"{cfg['seq_len']} to {out}")
    return 0


def _prepare_training_arrays(cfg: dict, model_cfg, dataset):
    from .data import split_train_val
    from .features import bundle_arrays, preprocess, scaler_fit
    train_set, val_set = split_train_val(dataset, cfg["split_ratio"],
                                         cfg["seed"])
    n = model_cfg.seq_len
    resample_to = _resample(cfg)
    train_pp = [preprocess(s, n, resample_to) for s in train_set]
    val_pp = [preprocess(s, n, resample_to) for s in val_set]
    scaler = scaler_fit(train_pp)
    include_dbdt = model_cfg.variant != "res_fno_no_dbdt"
    train_arrays = bundle_arrays(train_pp, scaler, n, include_dbdt)
    val_arrays = bundle_arrays(val_pp, scaler, n, include_dbdt)
    return scaler, train_arrays, val_arrays


def _train_config(cfg: dict):
    from .training import TrainConfig
    return TrainConfig(
        max_epochs=cfg["max_epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], beta1=cfg["beta1"],
        beta2=cfg["beta2"], epsilon=cfg["epsilon"],
        patience=cfg["patience"], min_delta=cfg["min_delta"],
        seed=cfg["seed"])


def write_history_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['train_loss']!r},"
                     f"{row['val_loss']!r}\n")


def cmd_train(cfg: dict) -> int:
    from .data import load_csv_dir
    from .model import build, save_checkpoint
    from .training import train
    if not cfg["data"]:
        raise CliError("train: --data directory is required")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_csv_dir(cfg["data"])
    model_cfg = _model_config(cfg)
    scaler, train_arrays, val_arrays = _prepare_training_arrays(
        cfg, model_cfg, dataset)
    params = build(model_cfg, cfg["seed"])
    params, history = train(params, train_arrays, val_arrays,
                            _train_config(cfg))
    save_checkpoint(out / "model.ckpt", params, scaler)
    write_history_csv(history, out / "history.csv")
    _manifest(out, "train", cfg)
    best = min((row["val_loss"] for row in history), default=float("nan"))
    print(f"train: {model_cfg.variant} for {len(history)} epochs, "
          f"best val loss {best:.6g}; checkpoint at {out / 'model.ckpt'}")
    return 0


def _checkpoint_path(cfg: dict) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else \
        Path(cfg["out"]) / "model.ckpt"


def write_report_files(report, out: Path, bins_title: str = "NRMSE (%)",
                       predictions=None) -> None:
    from .metrics import (write_histogram_csv, write_histogram_svg,
                          write_per_sample_csv, write_predictions_csv,
                          write_summary_json)
    write_per_sample_csv(report, out / "per_sample.csv")
    write_summary_json(report, out / "summary.json")
    write_histogram_csv(report, out / "histogram.csv")
    write_histogram_svg(report, out / "histogram.svg", bins_title)
    if predictions is not None:
        write_predictions_csv(predictions, out / "predictions.csv")


def cmd_eval(cfg: dict) -> int:
    from .data import load_csv_dir
    from .features import preprocess
    from .metrics import build_report, predict
    from .model import load_checkpoint
    ckpt = _checkpoint_path(cfg)
    if not ckpt.exists():
        raise CliError(f"eval: checkpoint {ckpt} not found")
    data_dir = cfg["test_data"] or cfg["data"]
    if not data_dir:
        raise CliError("eval: --data (or --test-data) directory is required")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    params, scaler = load_checkpoint(ckpt)
    if scaler is None:
        raise CliError(f"eval: checkpoint {ckpt} carries no scaler state")
    dataset = load_csv_dir(data_dir)
    samples = [preprocess(s, params.config.seq_len, _resample(cfg))
               for s in dataset]
    predictions = predict(params, samples, scaler)
    report = build_report(samples, predictions, with_core_loss=True,
                          bins=cfg["bins"])
    write_report_files(report, out,
                       predictions=predictions if cfg["save_predictions"] else None)
    _manifest(out, "eval", cfg)
    agg = report.aggregates
    print(f"eval: {agg['n_samples']} samples, mean NRMSE "
          f"{agg.get('nrmse_mean', float('nan')):.4g}%, mean R2 "
          f"{agg.get('r2_mean', float('nan')):.4g}% "
          f"({agg['n_flagged']} flagged)")
    return 0


ABLATION_VARIANTS = ("pure_fno", "res_fno_no_dbdt", "res_fno")


def cmd_ablate(cfg: dict) -> int:
    from .data import load_csv_dir, split_train_val
    from .features import preprocess
    from .metrics import build_report, predict
    from .model import build
    from .training import train
    if not cfg["data"]:
        raise CliError("ablate: --data directory is required")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_csv_dir(cfg["data"])
    if cfg["test_data"]:
        test_set = load_csv_dir(cfg["test_data"])
        pool = dataset
    else:
        pool, test_set = split_train_val(dataset, 1.0 - cfg["test_ratio"],
                                         cfg["seed"] + 1)
    rows = []
    for variant in ABLATION_VARIANTS:
        model_cfg = _model_config(cfg, variant=variant)
        scaler, train_arrays, val_arrays = _prepare_training_arrays(
            cfg, model_cfg, pool)
        params = build(model_cfg, cfg["seed"])
        params, history = train(params, train_arrays, val_arrays,
                                _train_config(cfg))
        test_pp = [preprocess(s, model_cfg.seq_len, _resample(cfg))
                   for s in test_set]
        report = build_report(test_pp, predict(params, test_pp, scaler))
        rows.append((variant, report.aggregates.get("r2_mean", float("nan")),
                     report.aggregates.get("nrmse_mean", float("nan")),
                     len(history)))
    with open(out / "ablation.csv", "w") as fh:
        fh.write("variant,mean_r2_pct,mean_nrmse_pct,epochs\n")
        for variant, r2m, nrm, epochs in rows:
            fh.write(f"{variant},{r2m!r},{nrm!r},{epochs}\n")
    _manifest(out, "ablate", cfg)
    print("variant            mean R2 (%)   mean NRMSE (%)")
    for variant, r2m, nrm, _ in rows:
        print(f"{variant:<18} {r2m:>11.4f}   {nrm:>13.4f}")
    print("reference mean NRMSE (Material 79 benchmark): "
          + "  ".join(f"{v}={REFERENCE_NRMSE[v]}%" for v in ABLATION_VARIANTS))
    return 0


def cmd_report(cfg: dict) -> int:
    """Re-aggregate a per-sample CSV into summary, histogram, and SVG."""
    import numpy as np

    from .metrics import EvalReport, _aggregate, nrmse_histogram, \
        write_histogram_csv, write_histogram_svg, write_summary_json
    if not cfg["data"]:
        raise CliError("report: --data must point at a per_sample.csv file")
    src = Path(cfg["data"])
    if not src.exists():
        raise CliError(f"report: {src} not found")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    nrmse_vals, r2_vals, flagged = [], [], []
    with open(src) as fh:
        header = fh.readline().strip().split(",")
        idx_n = header.index("nrmse_pct")
        idx_r = header.index("r2_pct")
        idx_f = header.index("flag")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if parts[idx_f]:
                flagged.append((int(parts[0]), parts[idx_f]))
                nrmse_vals.append(float("nan"))
                r2_vals.append(float("nan"))
            else:
                nrmse_vals.append(float(parts[idx_n]))
                r2_vals.append(float(parts[idx_r]))
    ok = np.array([v for v in nrmse_vals if not np.isnan(v)])
    okr = np.array([v for v in r2_vals if not np.isnan(v)])
    aggregates = {"n_samples": len(nrmse_vals), "n_flagged": len(flagged)}
    if len(ok):
        aggregates.update(_aggregate(ok, "nrmse"))
        aggregates.update(_aggregate(okr, "r2"))
    counts, edges = nrmse_histogram(ok, cfg["bins"])
    report = EvalReport(nrmse_pct=nrmse_vals, r2_pct=r2_vals,
                        core_loss_pred=None, core_loss_meas=None,
                        flagged=flagged, aggregates=aggregates,
                        histogram_edges=edges, histogram_counts=counts)
    write_summary_json(report, out / "summary.json")
    write_histogram_csv(report, out / "histogram.csv")
    write_histogram_svg(report, out / "histogram.svg")
    _manifest(out, "report", cfg)
    print(f"report: aggregated {len(nrmse_vals)} rows from {src}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        handler = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
                   "ablate": cmd_ablate, "report": cmd_report}[args.command]
        return handler(cfg)
    except Exception as err:  # one-line machine-parsable failure
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
