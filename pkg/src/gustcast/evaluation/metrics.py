"""Forecast error metrics, per-batch aggregation and ramp classification scores."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class ZeroTargetError(ValueError):
    """All targets are zero, so the normalising denominator vanishes."""


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y, yhat = np.asarray(y, dtype=float).ravel(), np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    return y, yhat


def nd(y, yhat) -> float:
    """Normalised deviation ``sum|yhat - y| / sum|y|``."""
    y, yhat = _pair(y, yhat)
    denom = np.abs(y).sum()
    if denom == 0:
        raise ZeroTargetError("ND undefined: all targets are zero")
    return float(np.abs(yhat - y).sum() / denom)


def nrmse(y, yhat) -> float:
    """Root-mean-square error divided by ``mean|y|``."""
    y, yhat = _pair(y, yhat)
    denom = np.abs(y).mean() if y.size else 0.0
    if denom == 0:
        raise ZeroTargetError("NRMSE undefined: all targets are zero")
    return float(np.sqrt(np.mean((yhat - y) ** 2)) / denom)


@dataclass
class MetricReport:
    per_batch_nd: np.ndarray
    per_batch_nrmse: np.ndarray
    batch_index: np.ndarray  # position of each kept batch in the test set
    model: str = ""
    farm: int | str = ""
    mode: str = ""
    excluded: int = 0  # all-zero-target batches left out

    @property
    def avg_nd(self) -> float:
        return float(np.mean(self.per_batch_nd))

    @property
    def avg_nrmse(self) -> float:
        return float(np.mean(self.per_batch_nrmse))

    def rows(self) -> list[dict]:
        """Rows of the metrics CSV (``farm,model,mode,batch_index,nd,nrmse``)."""
        return [{"farm": self.farm, "model": self.model, "mode": self.mode, "batch_index": int(i), "nd": float(a),
                 "nrmse": float(b)} for i, a, b in zip(self.batch_index, self.per_batch_nd, self.per_batch_nrmse)]

    @classmethod
    def from_rows(cls, rows: list[dict], n_batches: int | None = None) -> "MetricReport":
        if not rows:
            raise ValueError("no metric rows")
        rows = sorted(rows, key=lambda r: int(r["batch_index"]))
        first = rows[0]
        idx = np.array([int(r["batch_index"]) for r in rows])
        excluded = 0 if n_batches is None else n_batches - len(rows)
        return cls(np.array([float(r["nd"]) for r in rows]), np.array([float(r["nrmse"]) for r in rows]), idx,
                   first["model"], first["farm"], first["mode"], excluded)


def per_batch_report(predictions, targets, model: str = "", farm: int | str = "", mode: str = "") -> MetricReport:
    """ND and NRMSE of every test batch (row), skipping batches whose targets are all zero."""
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape or predictions.ndim != 2:
        raise ValueError(f"expected matching [batches, horizon] arrays, got {predictions.shape} and {targets.shape}")
    nds, nrmses, kept = [], [], []
    for i, (p, y) in enumerate(zip(predictions, targets)):
        if not np.any(y):
            continue
        nds.append(nd(y, p))
        nrmses.append(nrmse(y, p))
        kept.append(i)
    excluded = len(targets) - len(kept)
    if excluded:
        warnings.warn(f"{model or 'model'} farm {farm}: {excluded} all-zero test batch(es) excluded", RuntimeWarning)
    if not kept:
        raise ZeroTargetError("every test batch has all-zero targets")
    return MetricReport(np.array(nds), np.array(nrmses), np.array(kept), model, farm, mode, excluded)


@dataclass(frozen=True)
class ClassificationScores:
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = field(default_factory=tuple)  # metrics whose denominator was zero (reported as 0)


def precision_recall_f1(labels, predictions, weights=None) -> ClassificationScores:
    """Precision, recall and F1 of boolean predictions; optional per-instance weights."""
    labels = np.asarray(labels, dtype=bool)
    predictions = np.asarray(predictions, dtype=bool)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions differ in length")
    w = np.ones(labels.shape) if weights is None else np.asarray(weights, dtype=float)
    tp = float(w[labels & predictions].sum())
    fp = float(w[~labels & predictions].sum())
    fn = float(w[labels & ~predictions].sum())
    flags = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1")
    return ClassificationScores(precision, recall, f1, tuple(flags))
