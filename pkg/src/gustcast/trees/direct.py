"""Learner registry, the direct multi-step wrapper and exhaustive grid search."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .extra_trees import EtModel, EtParams, fit_extra_trees
from .gbm import GbmModel, GbmParams, fit_gbm
from .linear import LinearModel, fit_linear

_FITTERS = {"lr": (fit_linear, None), "gbm": (fit_gbm, GbmParams), "et": (fit_extra_trees, EtParams)}
_LOADERS = {"linear": LinearModel.from_dict, "gbm": GbmModel.from_dict, "extra_trees": EtModel.from_dict}


@dataclass(frozen=True)
class Learner:
    """A base regressor kind plus keyword parameters, fitted with a seed."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _FITTERS:
            raise ValueError(f"unknown learner {self.kind!r}; choose from {sorted(_FITTERS)}")
        self.build_params()

    def build_params(self):
        cls = _FITTERS[self.kind][1]
        if cls is None:
            if self.params:
                raise ValueError(f"linear regression takes no parameters, got {sorted(self.params)}")
            return None
        known = {f.name for f in fields(cls)}
        unknown = set(self.params) - known
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters {sorted(unknown)}")
        return cls(**self.params)

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0):
        fit_fn = _FITTERS[self.kind][0]
        return fit_fn(X, y, self.build_params(), np.random.default_rng(seed))

    def with_params(self, **overrides) -> "Learner":
        return Learner(self.kind, {**self.params, **overrides})


def model_to_json(model) -> str:
    return json.dumps(model.to_dict())


def model_from_dict(d: dict):
    try:
        return _LOADERS[d["model_type"]](d)
    except KeyError as exc:
        raise ValueError(f"unknown model_type {d.get('model_type')!r}") from exc


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


StepFeatures = Sequence[np.ndarray] | Callable[[int], np.ndarray]


def _step_matrix(features: StepFeatures, step: int) -> np.ndarray:
    return features(step) if callable(features) else features[step]


@dataclass
class DirectMultiStep:
    """One independent regressor per horizon step."""

    learner: Learner
    horizon: int = 24
    seed: int = 0
    models: list = field(default_factory=list)

    def fit(self, features: StepFeatures, targets: np.ndarray) -> "DirectMultiStep":
        """``features`` gives the ``[N, F]`` matrix of step ``h`` (list or callable); ``targets`` is ``[N, horizon]``."""
        targets = np.asarray(targets, dtype=float)
        if targets.ndim != 2 or targets.shape[1] != self.horizon:
            raise ValueError(f"targets must be [N, {self.horizon}], got {targets.shape}")
        if not callable(features) and len(features) != self.horizon:
            raise ValueError(f"expected {self.horizon} step matrices, got {len(features)}")
        self.models = []
        for h in range(self.horizon):
            X = _step_matrix(features, h)
            if X is None or len(X) != len(targets):
                raise ValueError(f"step {h}: feature rows do not match the {len(targets)} targets")
            self.models.append(self.learner.fit(X, targets[:, h], step_seed(self.seed, h)))
        return self

    def predict(self, features: StepFeatures) -> np.ndarray:
        if len(self.models) != self.horizon:
            raise RuntimeError("model is not fitted")
        return np.stack([m.predict(_step_matrix(features, h)) for h, m in enumerate(self.models)], axis=1)

    def to_dict(self) -> dict:
        return {"model_type": "direct_multistep", "learner": {"kind": self.learner.kind, "params": self.learner.params},
                "horizon": self.horizon, "seed": self.seed, "models": [m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, d: dict) -> "DirectMultiStep":
        return cls(Learner(**d["learner"]), d["horizon"], d["seed"], [model_from_dict(m) for m in d["models"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def fit_direct_multistep(features: StepFeatures, targets: np.ndarray, learner: Learner, horizon: int = 24,
                         seed: int = 0) -> DirectMultiStep:
    return DirectMultiStep(learner, horizon, seed).fit(features, targets)


@dataclass
class GridSearchResult:
    best_params: dict
    best_score: float
    table: list[dict]  # one row per combination: parameters plus "score"

    def write_csv(self, path) -> None:
        import pandas as pd
        pd.DataFrame(self.table).to_csv(path, index=False, lineterminator="\n")


def expand_grid(grid: dict[str, Sequence]) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("parameter grid is empty")
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def grid_search(grid: dict[str, Sequence], train: tuple, val: tuple,
                fit_predict: Callable[[dict, tuple, np.ndarray], np.ndarray],
                metric: Callable[[np.ndarray, np.ndarray], float]) -> GridSearchResult:
    """Evaluate every combination in ``grid`` on the validation split.

    ``train`` and ``val`` are ``(features, targets)`` pairs.
    ``fit_predict(params, train, val_features)`` fits on the training pair and
    predicts the validation features; the lowest ``metric(val_targets, pred)``
    wins, ties going to the earlier combination.
    """
    table = []
    best = None
    for params in expand_grid(grid):
        score = float(metric(val[1], fit_predict(params, train, val[0])))
        table.append({**params, "score": score})
        if best is None or score < best[1]:
            best = (params, score)
    return GridSearchResult(best[0], best[1], table)


def learner_fit_predict(learner: Learner, horizon: int | None = None, seed: int = 0):
    """``fit_predict`` adaptor for :func:`grid_search`; ``horizon`` switches to the direct multi-step wrapper."""
    def run(params: dict, train: tuple, val_features):
        tuned = learner.with_params(**params)
        if horizon is None:
            return tuned.fit(train[0], train[1], seed).predict(val_features)
        return fit_direct_multistep(train[0], train[1], tuned, horizon, seed).predict(val_features)
    return run
