from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

RIDGE = 1e-8


@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float
    ridge: float = 0.0  # jitter actually added to the Gram diagonal (0 when full rank)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {"model_type": "linear", "coef": self.coef.tolist(), "intercept": self.intercept, "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(np.asarray(d["coef"], dtype=float), float(d["intercept"]), float(d.get("ridge", 0.0)))


def fit_linear(X: np.ndarray, y: np.ndarray, params=None, rng=None) -> LinearModel:
    """Ordinary least squares through the centred normal equations.

    When the centred design is rank deficient (constant or collinear columns)
    a ridge of ``1e-8`` times the mean Gram diagonal is added, which leaves
    the coefficients of constant columns at exactly zero.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"expected X [N,F] and y [N], got {X.shape} and {y.shape}")
    if len(y) == 0:
        raise ValueError("cannot fit a linear model on zero rows")
    x_mean, y_mean = X.mean(axis=0), float(y.mean())
    Xc = X - x_mean
    gram = Xc.T @ Xc
    rhs = Xc.T @ (y - y_mean)
    ridge = 0.0
    if X.shape[1] and np.linalg.matrix_rank(Xc) < X.shape[1]:
        ridge = RIDGE * max(float(np.trace(gram)) / X.shape[1], 1.0)
        gram = gram + ridge * np.eye(X.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        coef = scipy.linalg.solve(gram, rhs, assume_a="sym") if X.shape[1] else np.zeros(0)
    return LinearModel(coef, y_mean - float(x_mean @ coef), ridge)
