"""Experiment execution: split, fit (with validation), merge-and-retrain, predict, persist."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from ..data import (FarmPanel, Split, SplitSpec, WindowedDataset, concat_farms_global, load_prepared,
                    split_train_val_test, tabular_features, window_samples)
from ..evaluation import MetricReport, per_batch_report
from ..neural import (CnnHeadConfig, NeuralConfig, TrainingConfig, build_model, extract_conv_features, hybrid_fit,
                      load_model, predict, save_model, train)
from ..trees import DirectMultiStep, GbmParams, Learner, fit_direct_multistep, grid_search, learner_fit_predict
from .config import NEURAL_MODELS, TREE_MODELS, ConfigError, ExperimentConfig, config_from_dict

METRIC_FIELDS = ["farm", "model", "mode", "batch_index", "nd", "nrmse"]
PREDICTION_FIELDS = ["farm", "batch_index", "step", "timestamp", "actual", "predicted"]


@dataclass
class FarmForecast:
    farm: int
    predictions: np.ndarray  # [n_test, horizon]
    targets: np.ndarray
    start: np.ndarray  # first target hour of each test batch

    def report(self, model: str, mode: str) -> MetricReport:
        return per_batch_report(self.predictions, self.targets, model, self.farm, mode)


@dataclass
class RunResult:
    run_dir: Path
    config: ExperimentConfig
    forecasts: list[FarmForecast]
    reports: list[MetricReport]
    extra: dict = field(default_factory=dict)


# ----------------------------------------------------------------- data access
def load_panels(config: ExperimentConfig) -> tuple[list[FarmPanel], dict]:
    panels, doc = load_prepared(config.data)
    available = [p.farm_id for p in panels]
    if config.farms is None:
        chosen = panels
    else:
        missing = sorted(set(config.farms) - set(available))
        if missing:
            raise ConfigError(f"farms {missing} are not in the prepared data (available: {available})")
        chosen = [p for p in panels if p.farm_id in set(config.farms)]
    if config.mode == "global" and len(chosen) < 2:
        raise ConfigError("global mode needs at least two farms")
    return chosen, doc


def split_spec(doc: dict) -> SplitSpec:
    s = doc.get("split", {})
    return SplitSpec(test_days=int(s.get("test_days", 120)), val_fraction=float(s.get("val_fraction", 0.10)))


def farm_splits(panels: list[FarmPanel], doc: dict, stride: int) -> dict[int, Split]:
    """Chronological split per farm; ``stride`` thins the train and validation windows only."""
    out = {}
    spec = split_spec(doc)
    for panel in panels:
        ds = window_samples(panel, doc.get("lookback", 48), doc.get("horizon", 24), stride=1,
                            n_farms=doc.get("n_farms", 7))
        split = split_train_val_test(ds, spec)
        if stride > 1:
            split = Split(split.train.take(np.arange(0, len(split.train), stride)),
                          split.val.take(np.arange(0, len(split.val), stride)), split.test)
        if len(split.val) == 0:
            raise ConfigError(f"farm {panel.farm_id}: validation split is empty (lower train_stride)")
        out[panel.farm_id] = split
    return out


def _groups(config: ExperimentConfig, splits: dict[int, Split]) -> list[tuple[list[int], Split]]:
    """Training units: one per farm (individual) or one over all farms (global)."""
    if config.mode == "individual":
        return [([f], s) for f, s in splits.items()]
    farms = list(splits)
    merged = Split(*(concat_farms_global([getattr(splits[f], part) for f in farms]) for part in ("train", "val", "test")))
    return [(farms, merged)]


# --------------------------------------------------------------- model fitting
def _step_features(ds: WindowedDataset, n_lags: int):
    return lambda h: tabular_features(ds, include_lags=n_lags > 0, n_lags=n_lags or None, step=h)


def _learner(config: ExperimentConfig) -> Learner:
    try:
        return Learner(config.model, config.model_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _val_mse(y, pred) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(y)) ** 2))


def tune(config: ExperimentConfig, split: Split) -> tuple[dict, list[dict]]:
    learner = _learner(config)
    horizon = split.train.horizon
    result = grid_search(config.grid, (_step_features(split.train, config.lags), split.train.targets()),
                         (_step_features(split.val, config.lags), split.val.targets()),
                         learner_fit_predict(learner, horizon, config.seed), _val_mse)
    return result.best_params, result.table


def fit_trees(config: ExperimentConfig, split: Split, run_dir: Path, tag: str) -> tuple[DirectMultiStep, dict]:
    info: dict = {}
    learner = _learner(config)
    if config.grid:
        best, table = tune(config, split)
        info["best_params"] = best
        _write_rows(run_dir / f"grid_{tag}.csv", table)
        learner = learner.with_params(**best)
    fit_set = split.merged if config.retrain else split.train
    model = fit_direct_multistep(_step_features(fit_set, config.lags), fit_set.targets(), learner,
                                 fit_set.horizon, config.seed)
    if config.save_models:
        model.save(run_dir / f"model_{tag}.json")
    return model, info


def neural_config(config: ExperimentConfig, panels: list[FarmPanel], doc: dict) -> NeuralConfig:
    overrides = dict(config.neural)
    head = CnnHeadConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in overrides.pop("head", {}).items()})
    ref = panels[0]
    base = dict(gfs_grid=tuple(ref.gfs.shape[1:]), arp_grid=tuple(ref.arp.shape[1:]),
                horizon=doc.get("horizon", 24), lookback=doc.get("lookback", 48), n_farms=doc.get("n_farms", 7))
    try:
        return NeuralConfig(head=head, **{**base, **{k: tuple(v) if isinstance(v, list) else v
                                                     for k, v in overrides.items()}})
    except TypeError as exc:
        raise ConfigError(f"bad neural override: {exc}") from exc


def training_config(config: ExperimentConfig) -> TrainingConfig:
    try:
        return TrainingConfig(**{"seed": config.seed, **config.training})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training override: {exc}") from exc


def fit_neural(config: ExperimentConfig, split: Split, ncfg: NeuralConfig, run_dir: Path, tag: str):
    tcfg = training_config(config)
    model, history = train(build_model(config.model, ncfg, config.seed), split.train, split.val, tcfg,
                           run_dir / f"history_{tag}.csv")
    info = {"best_epoch": history.best_epoch, "epochs_run": len(history.epochs),
            "best_val_mse": history.best_val_mse}
    if config.retrain:
        epochs = max(history.best_epoch, 1)
        refit_cfg = replace(tcfg, max_epochs=epochs, patience=min(tcfg.patience, epochs))
        model, refit = train(build_model(config.model, ncfg, config.seed), split.merged, None, refit_cfg,
                             run_dir / f"history_{tag}_retrain.csv")
        info["retrain_epochs"] = len(refit.epochs)
    save_model(run_dir / f"model_{tag}.ckpt", model, {"mode": config.mode, "farms": _farm_list(split)})
    return model, info


def _farm_list(split: Split) -> list[int]:
    return sorted({int(f) for f in split.train.farm_ids()})


def run_hybrid(config: ExperimentConfig, groups, run_dir: Path) -> tuple[dict[int, np.ndarray], dict]:
    path = Path(config.cnn_checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"CNN checkpoint {path} not found")
    cnn, meta = load_model(path)
    if meta.get("kind") != "cnn" or meta.get("mode") != "global" or not cnn.trained:
        raise ConfigError("conv2d-gbm needs a trained global spatial CNN checkpoint")
    try:
        params = GbmParams(**config.model_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    n_lags = config.lags
    preds: dict[int, np.ndarray] = {}

    def design(ds: WindowedDataset):
        original = tabular_features(ds, include_lags=n_lags > 0, n_lags=n_lags or None)
        return original, extract_conv_features(cnn, ds.gfs(), ds.arp())

    for farms, split in groups:
        fit_set = split.merged if config.retrain else split.train
        original, conv = design(fit_set)
        ids = np.repeat(fit_set.farm_ids(), fit_set.horizon)
        # individual mode keeps one GBM per farm; global mode pools the farms into one model
        key = ids if config.mode == "individual" else np.zeros_like(ids)
        model = hybrid_fit(conv, original, fit_set.targets().reshape(-1), params, key)
        for farm in farms:
            test = split.test.for_farm(farm)
            o, c = design(test)
            k = np.full(len(o), farm if config.mode == "individual" else 0)
            preds[farm] = model.predict(o, c, k).reshape(len(test), test.horizon)
    return preds, {"cnn_checkpoint": str(path)}


# ------------------------------------------------------------------- the run
def new_run_dir(config: ExperimentConfig) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = Path(config.out) / f"{stamp}-{config.digest()}"
    run_dir, n = base, 1
    while run_dir.exists():
        n += 1
        run_dir = base.with_name(f"{base.name}-{n}")
    run_dir.mkdir(parents=True)
    return run_dir


def run_experiment(config: ExperimentConfig, run_dir: Path | None = None) -> RunResult:
    config.validate()
    panels, doc = load_panels(config)
    run_dir = new_run_dir(config) if run_dir is None else Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    started = time.perf_counter()
    splits = farm_splits(panels, doc, config.stride)
    groups = _groups(config, splits)
    preds: dict[int, np.ndarray] = {}
    extra: dict = {}
    if config.model == "conv2d-gbm":
        preds, extra = run_hybrid(config, groups, run_dir)
    elif config.model in NEURAL_MODELS:
        ncfg = neural_config(config, panels, doc)
        for farms, split in groups:
            tag = f"farm{farms[0]}" if config.mode == "individual" else "global"
            model, extra[tag] = fit_neural(config, split, ncfg, run_dir, tag)
            for farm in farms:
                preds[farm] = predict(model, split.test.for_farm(farm))
    else:
        assert config.model in TREE_MODELS
        for farms, split in groups:
            tag = f"farm{farms[0]}" if config.mode == "individual" else "global"
            model, extra[tag] = fit_trees(config, split, run_dir, tag)
            for farm in farms:
                test = split.test.for_farm(farm)
                preds[farm] = model.predict(_step_features(test, config.lags))
    forecasts = []
    for farm in sorted(preds):
        test = splits[farm].test
        forecasts.append(FarmForecast(farm, np.asarray(preds[farm], dtype=np.float64), test.targets(),
                                      test.sample_timestamps()))
    reports = [f.report(config.model, config.mode) for f in forecasts]
    write_metrics(run_dir / "metrics.csv", reports)
    write_predictions(run_dir / "predictions.csv", forecasts)
    summary = {"model": config.model, "mode": config.mode, "seed": config.seed,
               "farms": {str(r.farm): {"avg_nd": r.avg_nd, "avg_nrmse": r.avg_nrmse, "excluded": r.excluded,
                                       "batches": int(len(r.per_batch_nd))} for r in reports},
               "details": extra}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    (run_dir / "timing.json").write_text(json.dumps({"seconds": time.perf_counter() - started}) + "\n")
    return RunResult(run_dir, config, forecasts, reports, extra)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialise {type(o)}")


# ------------------------------------------------------------------ artifacts
def _write_rows(path: Path, rows: list[dict], fieldnames: list[str] | None = None) -> None:
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_metrics(path: Path, reports: list[MetricReport]) -> None:
    _write_rows(path, [row for r in reports for row in r.rows()], METRIC_FIELDS)


def read_metrics(path: Path) -> list[MetricReport]:
    """Reports keyed by (farm, model, mode), rebuilt from a metrics CSV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metrics file {path} not found")
    groups: dict[tuple, list[dict]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault((int(row["farm"]), row["model"], row["mode"]), []).append(row)
    return [replace(MetricReport.from_rows(rows), farm=farm) for (farm, _, _), rows in groups.items()]


def write_predictions(path: Path, forecasts: list[FarmForecast]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_FIELDS)
        for f in forecasts:
            hours = np.asarray(f.start, dtype="datetime64[h]")
            for b in range(len(f.predictions)):
                for h in range(f.predictions.shape[1]):
                    ts = str(hours[b] + np.timedelta64(h, "h")) + ":00:00Z"
                    w.writerow([f.farm, b, h, ts, repr(float(f.targets[b, h])), repr(float(f.predictions[b, h]))])


def read_predictions(path: Path) -> list[FarmForecast]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"predictions file {path} not found")
    df = pd.read_csv(path, float_precision="round_trip")
    out = []
    for farm, g in df.groupby("farm", sort=True):
        g = g.sort_values(["batch_index", "step"])
        n, hz = g["batch_index"].nunique(), g["step"].nunique()
        start = pd.to_datetime(g["timestamp"].str.rstrip("Z").values[::hz]).values.astype("datetime64[h]")
        out.append(FarmForecast(int(farm), g["predicted"].to_numpy().reshape(n, hz),
                                g["actual"].to_numpy().reshape(n, hz), start))
    return out


def read_run_config(run_dir: Path) -> ExperimentConfig:
    path = Path(run_dir) / "config.json"
    if not path.exists():
        raise FileNotFoundError(f"{run_dir} is not a run directory (no config.json)")
    return config_from_dict(json.loads(path.read_text()))
