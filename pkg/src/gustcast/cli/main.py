"""``gustcast`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..data import PrepareConfig, SplitSpec, generate_synthetic_farm, prepare_farm, ramp_labels, save_panel
from ..data.io import read_manifest, read_raw_farm, write_manifest, write_raw_farm
from ..evaluation import per_batch_report, precision_recall_f1
from ..neural import TrainingDivergedError
from .compare import METRICS, build_comparison
from .config import TREE_MODELS, ConfigError, ExperimentConfig, apply_assignments, config_from_dict, load_config
from .runner import (_groups, _write_rows, farm_splits, load_panels, new_run_dir, read_metrics, read_predictions,
                     read_run_config, run_experiment, tune, write_metrics)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.code = code


# -------------------------------------------------------------------- helpers
def parse_farms(text: str | None) -> list[int] | None:
    """``"0,2,5"`` or ``"0-6"`` (inclusive) into a list of ids."""
    if text is None:
        return None
    farms: list[int] = []
    try:
        for part in text.split(","):
            lo, sep, hi = part.partition("-")
            farms.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    except ValueError as exc:
        raise ConfigError(f"cannot parse farm list {text!r}") from exc
    return farms


def worker_count(n_tasks: int) -> int:
    raw = os.environ.get("GUSTCAST_THREADS")
    if raw is None:
        return max(1, min(n_tasks, os.cpu_count() or 1))
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"GUSTCAST_THREADS must be a positive integer, got {raw!r}") from exc
    if cap < 1:
        raise ConfigError(f"GUSTCAST_THREADS must be a positive integer, got {raw!r}")
    return max(1, min(n_tasks, cap))


def experiment_config(args) -> ExperimentConfig:
    config = load_config(args.config)
    config = config.with_overrides(seed=args.seed, farms=parse_farms(args.farms), mode=args.mode, model=args.model,
                                   include_lags=args.lags, out=args.out, data=args.data)
    return apply_assignments(config, args.set).validate()


def emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


# ------------------------------------------------------------------- commands
def cmd_generate(args) -> int:
    out = Path(args.out or "data/raw")
    out.mkdir(parents=True, exist_ok=True)
    farms = parse_farms(args.farms) or list(range(7))
    entries = []
    for farm in farms:
        power, gfs, arp = generate_synthetic_farm(args.seed if args.seed is not None else 0, args.days, farm)
        entries.append(write_raw_farm(out, farm, power.timestamps, power.power, gfs, arp))
    write_manifest(out / "manifest.json", entries,
                   {"generator": {"seed": args.seed if args.seed is not None else 0, "days": args.days}})
    emit({"out": str(out), "farms": farms, "hours": args.days * 24})
    return EXIT_OK


def cmd_prepare(args) -> int:
    raw = Path(args.raw)
    manifest = raw / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest} (run `gustcast generate` first)")
    doc = read_manifest(manifest)
    out = Path(args.out or "data/prepared")
    out.mkdir(parents=True, exist_ok=True)
    spec = SplitSpec(test_days=args.test_days)
    cfg = PrepareConfig(month_period=args.month_period, split=spec)
    wanted = parse_farms(args.farms)
    farms = []
    for entry in sorted(doc["farms"], key=lambda e: e["farm_id"]):
        if wanted is not None and entry["farm_id"] not in wanted:
            continue
        panel, info = prepare_farm(entry["farm_id"], *read_raw_farm(raw, entry), cfg)
        name = f"farm_{entry['farm_id']}.npz"
        save_panel(out / name, panel)
        farms.append({**info, "panel": name})
    write_manifest(out / "prepared.json", farms,
                   {"split": {"test_days": spec.test_days, "val_fraction": spec.val_fraction},
                    "lookback": cfg.lookback, "horizon": cfg.horizon, "n_farms": 7,
                    "month_period": cfg.month_period, "raw": str(raw)})
    emit({"out": str(out), "farms": [f["farm_id"] for f in farms],
          "holdout_start": {f["farm_id"]: f["holdout_start"] for f in farms}})
    return EXIT_OK


def _run_summary(result) -> dict:
    return {"run_dir": str(result.run_dir), "model": result.config.model, "mode": result.config.mode,
            "farms": {str(r.farm): {"avg_nd": r.avg_nd, "avg_nrmse": r.avg_nrmse} for r in result.reports}}


def cmd_train(args) -> int:
    result = run_experiment(experiment_config(args))
    emit(_run_summary(result))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    config = read_run_config(run)
    forecasts = read_predictions(run / "predictions.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        reports = [per_batch_report(f.predictions, f.targets, config.model, f.farm, config.mode) for f in forecasts]
    metrics = run / "metrics.csv"
    consistent = None
    if metrics.exists():
        stored = {int(r.farm): r for r in read_metrics(metrics)}
        consistent = all(np.array_equal(stored[int(r.farm)].per_batch_nd, r.per_batch_nd)
                         and np.array_equal(stored[int(r.farm)].per_batch_nrmse, r.per_batch_nrmse)
                         for r in reports)
    else:
        write_metrics(metrics, reports)
    emit({"run_dir": str(run), "consistent": consistent,
          "farms": {str(r.farm): {"avg_nd": r.avg_nd, "avg_nrmse": r.avg_nrmse} for r in reports}})
    return EXIT_OK if consistent in (None, True) else EXIT_FAILURE


def _expand_configs(args) -> list[ExperimentConfig]:
    base = experiment_config(args)
    models = args.models.split(",") if args.models else [base.model]
    modes = args.modes.split(",") if args.modes else [base.mode]
    return [config_from_dict({**base.to_dict(), "model": m, "mode": d}).validate() for m in models for d in modes]


def _run_config_dict(doc: dict) -> str:
    return str(run_experiment(config_from_dict(doc)).run_dir)


def cmd_compare(args) -> int:
    run_dirs: list[Path] = []
    configs: list[ExperimentConfig] = []
    for item in args.inputs:
        path = Path(item)
        if path.is_dir():
            run_dirs.append(path)
        elif path.suffix == ".json" and path.exists():
            configs.append(apply_assignments(load_config(path), args.set).validate())
        else:
            raise FileNotFoundError(f"{item} is neither a run directory nor a config file")
    if args.models or args.modes or (not args.inputs):
        configs.extend(_expand_configs(args))
    # the CNN checkpoint for conv2d-gbm must exist before that run starts, so neural runs go first
    configs.sort(key=lambda c: c.model == "conv2d-gbm")
    if configs:
        workers = worker_count(len(configs))
        docs = [c.to_dict() for c in configs]
        if workers == 1:
            run_dirs.extend(Path(_run_config_dict(d)) for d in docs)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                run_dirs.extend(Path(p) for p in pool.map(_run_config_dict, docs))
    if not run_dirs:
        raise ConfigError("nothing to compare")
    reports = [r for d in run_dirs for r in read_metrics(d / "metrics.csv")]
    comparison = build_comparison(reports)
    out = Path(args.report or Path(args.out or "runs") / f"compare-{datetime.now(timezone.utc):%Y%m%dT%H%M%S}")
    out.mkdir(parents=True, exist_ok=True)
    comparison.write_csv(out / "comparison.csv")
    comparison.write_tests(out / "significance.csv")
    tables = "\n\n".join(f"### {m.upper()}\n\n{comparison.markdown(m)}" for m in METRICS)
    (out / "table.md").write_text(tables + "\n")
    (out / "runs.txt").write_text("".join(f"{d}\n" for d in run_dirs))
    print(tables)
    emit({"report": str(out), "runs": [str(d) for d in run_dirs], "cells": len(comparison.cells)})
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    config = experiment_config(args)
    if config.model not in TREE_MODELS:
        raise ConfigError("gridsearch supports lr, et and gbm")
    if not config.grid:
        raise ConfigError("gridsearch needs a parameter grid (config key `grid` or --set grid=...)")
    panels, doc = load_panels(config)
    splits = farm_splits(panels, doc, config.stride)
    run_dir = new_run_dir(config)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    best = {}
    for farms, split in _groups(config, splits):
        tag = f"farm{farms[0]}" if config.mode == "individual" else "global"
        params, table = tune(config, split)
        _write_rows(run_dir / f"grid_{tag}.csv", table)
        best[tag] = params
    (run_dir / "best_params.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    emit({"run_dir": str(run_dir), "best_params": best})
    return EXIT_OK


def _label(config: ExperimentConfig) -> str:
    return f"{config.model}:{config.mode}"


def cmd_plotdata(args) -> int:
    runs = [Path(r) for r in args.runs]
    out = Path(args.out or runs[0] / "plotdata")
    out.mkdir(parents=True, exist_ok=True)
    labels, per_batch, series = [], {}, {}
    for run in runs:
        config = read_run_config(run)
        label = _label(config)
        if label in labels:
            raise ConfigError(f"two runs share the label {label}")
        labels.append(label)
        reports = read_metrics(run / "metrics.csv")
        for metric in METRICS:
            table: dict[int, list[float]] = {}
            for r in reports:
                for b, v in zip(r.batch_index, getattr(r, f"per_batch_{metric}")):
                    table.setdefault(int(b), []).append(float(v))
            per_batch[(label, metric)] = {b: float(np.mean(v)) for b, v in table.items()}
        forecasts = {f.farm: f for f in read_predictions(run / "predictions.csv")}
        farm = args.farm if args.farm is not None else min(forecasts)
        if farm not in forecasts:
            raise ConfigError(f"farm {farm} not in run {run}")
        series[label] = forecasts[farm]
    batches = sorted(set().union(*(per_batch[(l, "nd")].keys() for l in labels)))
    rows = [{"batch_index": b, **{f"{l}_{m}": per_batch[(l, m)].get(b, float("nan")) for l in labels
                                  for m in METRICS}} for b in batches]
    _write_rows(out / "per_batch.csv", rows, ["batch_index"] + [f"{l}_{m}" for l in labels for m in METRICS])
    ref = series[labels[0]]
    hz = ref.targets.shape[1]
    hours = np.asarray(ref.start, dtype="datetime64[h]")[:, None] + np.arange(hz).astype("timedelta64[h]")
    pred_rows = []
    for i, ts in enumerate(hours.reshape(-1)):
        row = {"timestamp": str(ts) + ":00:00Z", "actual": float(ref.targets.reshape(-1)[i])}
        row.update({l: float(series[l].predictions.reshape(-1)[i]) for l in labels})
        pred_rows.append(row)
    _write_rows(out / "predictions.csv", pred_rows, ["timestamp", "actual"] + labels)
    emit({"out": str(out), "per_batch_rows": len(rows), "prediction_rows": len(pred_rows), "models": labels})
    return EXIT_OK


def cmd_ramps(args) -> int:
    run = Path(args.run)
    config = read_run_config(run)
    rows = []
    for f in read_predictions(run / "predictions.csv"):
        actual = np.concatenate([ramp_labels(y, args.threshold, args.window) for y in f.targets])
        pred = np.concatenate([ramp_labels(p, args.threshold, args.window) for p in f.predictions])
        s = precision_recall_f1(actual, pred)
        rows.append({"farm": f.farm, "model": config.model, "mode": config.mode, "ramps": int(actual.sum()),
                     "precision": s.precision, "recall": s.recall, "f1": s.f1, "flags": ";".join(s.flags)})
    _write_rows(run / "ramps.csv", rows, ["farm", "model", "mode", "ramps", "precision", "recall", "f1", "flags"])
    emit({"run_dir": str(run), "farms": rows})
    return EXIT_OK


# --------------------------------------------------------------------- parser
def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its keys")
    p.add_argument("--data", help="prepared data directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--farms", help="farm ids, e.g. 0,1,2 or 0-6")
    p.add_argument("--mode", choices=["individual", "global"])
    p.add_argument("--model", choices=["lr", "et", "gbm", "cnn", "cnn-rnn", "conv2d-gbm"])
    p.add_argument("--lags", action=argparse.BooleanOptionalAction, default=None, help="add power lag features")
    p.add_argument("--out", help="parent directory of run directories")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; dotted keys reach nested objects, values parse as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gustcast", description="Day-ahead wind-power forecasting experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic power and NWP CSVs plus a manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--farms", help="farm ids (default 0-6)")
    p.add_argument("--out", help="output directory (default data/raw)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("prepare", help="clean, select levels, normalise and store per-farm panels")
    p.add_argument("--raw", default="data/raw")
    p.add_argument("--out", help="output directory (default data/prepared)")
    p.add_argument("--farms")
    p.add_argument("--test-days", type=int, default=120)
    p.add_argument("--month-period", type=float, default=12.0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run one experiment and write its run directory")
    _experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="recompute metrics of a run from its stored predictions")
    p.add_argument("run")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="comparison grid with significance daggers")
    p.add_argument("inputs", nargs="*", help="run directories and/or config files")
    _experiment_flags(p)
    p.add_argument("--models", help="comma list of models to run from the base config")
    p.add_argument("--modes", help="comma list of modes to run from the base config")
    p.add_argument("--report", help="directory for the comparison outputs")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gridsearch", help="tune tree-model parameters on the validation split")
    _experiment_flags(p)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("plotdata", help="CSV series for error-per-batch and prediction plots")
    p.add_argument("runs", nargs="+")
    p.add_argument("--farm", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("ramps", help="ramp-event precision/recall/F1 of a run")
    p.add_argument("run")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--window", type=int, default=1)
    p.set_defaults(func=cmd_ramps)
    return parser


def _error_exit(exc: BaseException, command: str | None, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "command": command, "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error_exit(exc, args.command, EXIT_CONFIG)
    except FileNotFoundError as exc:
        return _error_exit(exc, args.command, EXIT_MISSING)
    except TrainingDivergedError as exc:
        return _error_exit(exc, args.command, EXIT_DIVERGED)
    except (ValueError, KeyError, RuntimeError) as exc:
        return _error_exit(exc, args.command, EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
