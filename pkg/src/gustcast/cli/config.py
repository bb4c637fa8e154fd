"""Experiment configuration: JSON file plus command-line overrides.

Schema (all keys optional except where a command needs them)::

    {
      "data": "data/prepared",      # output directory of `gustcast prepare`
      "out": "runs",                # parent of run directories
      "farms": null,                # farm ids; null means every prepared farm
      "mode": "individual",         # or "global"
      "model": "gbm",               # lr | et | gbm | cnn | cnn-rnn | conv2d-gbm
      "include_lags": false,
      "n_lags": null,               # null: 24 for et, the full lookback otherwise
      "seed": 0,
      "params": {},                 # tree/GBM hyperparameters, flat or keyed by model name
      "grid": null,                 # {param: [values]} tuned on the validation split
      "neural": {},                 # NeuralConfig overrides (dense_units, head, dtype, ...)
      "training": {},               # TrainingConfig overrides (max_epochs, patience, ...)
      "train_stride": 1,            # keep every k-th train/val window; int or keyed by model name
      "retrain": true,              # refit on train+val before testing
      "cnn_checkpoint": null,       # trained global CNN for conv2d-gbm
      "save_models": false
    }
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

MODELS = ("lr", "et", "gbm", "cnn", "cnn-rnn", "conv2d-gbm")
TREE_MODELS = ("lr", "et", "gbm")
NEURAL_MODELS = ("cnn", "cnn-rnn")
MODES = ("individual", "global")
ET_LAGS = 24


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    data: str = "data/prepared"
    out: str = "runs"
    farms: list[int] | None = None
    mode: str = "individual"
    model: str = "gbm"
    include_lags: bool = False
    n_lags: int | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)
    grid: dict | None = None
    neural: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    train_stride: int | dict = 1
    retrain: bool = True
    cnn_checkpoint: str | None = None
    save_models: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.farms is not None:
            if len(set(self.farms)) != len(self.farms) or not self.farms:
                raise ConfigError("farms must be a non-empty list of distinct ids")
            if self.mode == "global" and len(self.farms) < 2:
                raise ConfigError("global mode needs at least two farms")
        if self.model == "conv2d-gbm" and not self.cnn_checkpoint:
            raise ConfigError("conv2d-gbm needs cnn_checkpoint: a trained global CNN")
        strides = self.train_stride.values() if isinstance(self.train_stride, dict) else [self.train_stride]
        if any(not isinstance(k, int) or k < 1 for k in strides):
            raise ConfigError("train_stride must be >= 1")
        if self.n_lags is not None and self.n_lags < 1:
            raise ConfigError("n_lags must be >= 1")
        if self.grid is not None and self.model not in TREE_MODELS + ("conv2d-gbm",):
            raise ConfigError("grid search applies to tree models only")
        return self

    @property
    def lags(self) -> int:
        if not self.include_lags:
            return 0
        if self.n_lags is not None:
            return self.n_lags
        return ET_LAGS if self.model == "et" else 48

    @property
    def model_params(self) -> dict:
        """``params`` for this model: the ``params[model]`` entry when keyed by model name, else ``params``."""
        if self.params and set(self.params) <= set(MODELS):
            return dict(self.params.get(self.model, {}))
        return dict(self.params)

    @property
    def stride(self) -> int:
        if isinstance(self.train_stride, dict):
            return self.train_stride.get(self.model, 1)
        return self.train_stride

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:10]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _coerce(d: dict) -> dict:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    return ExperimentConfig(**_coerce(dict(d)))


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc)


def apply_assignments(config: ExperimentConfig, assignments: list[str]) -> ExperimentConfig:
    """Apply ``key=value`` overrides; dotted keys reach into dict fields, values parse as JSON when possible."""
    doc = config.to_dict()
    for item in assignments or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        target = doc
        for p in parts[:-1]:
            if target.get(p) is None:
                target[p] = {}
            if not isinstance(target[p], dict):
                raise ConfigError(f"cannot set {key}: {p} is not an object")
            target = target[p]
        target[parts[-1]] = value
    return config_from_dict(doc)
