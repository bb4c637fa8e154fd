"""Conv2D feature extraction feeding per-farm gradient-boosted trees."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..trees import GbmModel, GbmParams, fit_gbm
from ..autodiff import no_grad
from .models import _Forecaster


class UntrainedModelError(RuntimeError):
    pass


def extract_conv_features(model: _Forecaster, x_gfs: np.ndarray, x_arp: np.ndarray, batch_size: int = 32,
                          allow_untrained: bool = False) -> np.ndarray:
    """Flattened conv-head outputs of both sources, ``[B*horizon, gfs_width + arp_width]``.

    Runs in infer mode (batchnorm running statistics, no dropout). Rows are
    ordered sample-major, step-minor, matching ``tabular_features``.
    """
    if not (model.trained or allow_untrained):
        raise UntrainedModelError("feature extraction needs a trained CNN checkpoint")
    x_gfs, x_arp = np.asarray(x_gfs), np.asarray(x_arp)
    if len(x_gfs) != len(x_arp):
        raise ValueError(f"GFS and ARPEGE batches differ in length: {len(x_gfs)} vs {len(x_arp)}")
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            blocks = [model.conv_features(x_gfs[s:s + batch_size], x_arp[s:s + batch_size]).data
                      for s in range(0, len(x_gfs), batch_size)]
    finally:
        model.train(was_training)
    width = model.gfs_head.width + model.arp_head.width
    return np.concatenate(blocks) if blocks else np.zeros((0, width))


@dataclass
class HybridModel:
    """One GBM per farm over ``[original features | conv features]``."""

    models: dict[int, GbmModel] = field(default_factory=dict)
    n_original: int = 0
    n_conv: int = 0
    rows: dict[int, np.ndarray] = field(default_factory=dict)  # training-row provenance per farm

    def predict(self, original: np.ndarray, conv: np.ndarray, farm_ids: np.ndarray) -> np.ndarray:
        X = _join(original, conv)
        farm_ids = np.asarray(farm_ids)
        out = np.empty(len(X))
        for farm in np.unique(farm_ids):
            if int(farm) not in self.models:
                raise KeyError(f"no hybrid model for farm {int(farm)}")
            rows = farm_ids == farm
            out[rows] = self.models[int(farm)].predict(X[rows])
        return out


def _join(original: np.ndarray, conv: np.ndarray) -> np.ndarray:
    original, conv = np.asarray(original, dtype=float), np.asarray(conv, dtype=float)
    if len(original) != len(conv):
        raise ValueError(f"row mismatch: {len(original)} original rows vs {len(conv)} conv rows")
    return np.concatenate([original, conv], axis=1)


def hybrid_fit(conv: np.ndarray, original: np.ndarray, y: np.ndarray, params: GbmParams = GbmParams(),
               farm_ids: np.ndarray | None = None) -> HybridModel:
    """Fit a GBM per farm on that farm's rows only; columns are original then extracted."""
    X = _join(original, conv)
    y = np.asarray(y, dtype=float)
    if len(y) != len(X):
        raise ValueError(f"row mismatch: {len(X)} feature rows vs {len(y)} targets")
    farm_ids = np.zeros(len(y), dtype=np.int64) if farm_ids is None else np.asarray(farm_ids)
    if len(farm_ids) != len(y):
        raise ValueError("farm_ids must have one entry per row")
    model = HybridModel(n_original=np.shape(original)[1], n_conv=np.shape(conv)[1])
    for farm in np.unique(farm_ids):
        rows = np.flatnonzero(farm_ids == farm)
        model.models[int(farm)] = fit_gbm(X[rows], y[rows], params)
        model.rows[int(farm)] = rows
    return model
