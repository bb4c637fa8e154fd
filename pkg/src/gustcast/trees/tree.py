"""Flat-array regression trees shared by the GBM and extra-trees learners."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

LEAF = -1


@dataclass
class Tree:
    """Node arrays; node 0 is the root and ``feature == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64, leaf mean (unused on internal nodes)
    n_samples: np.ndarray  # int64, training rows reaching the node

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def leaf_mask(self) -> np.ndarray:
        return self.feature == LEAF

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_mask.sum())

    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for node in range(self.node_count):  # children are always numbered after their parent
            if self.feature[node] != LEAF:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict(self.feature, self.threshold, self.left, self.right, self.value, X)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by each row."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(), "left": self.left.tolist(),
                "right": self.right.tolist(), "value": self.value.tolist(), "n_samples": self.n_samples.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int32), np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int32), np.asarray(d["right"], dtype=np.int32),
                   np.asarray(d["value"], dtype=np.float64), np.asarray(d["n_samples"], dtype=np.int64))

    @classmethod
    def from_arrays(cls, arrays, count: int) -> "Tree":
        f, t, l, r, v, n = arrays
        return cls(f[:count].copy(), t[:count].copy(), l[:count].copy(), r[:count].copy(), v[:count].copy(),
                   n[:count].copy())


def allocate_nodes(capacity: int):
    return (np.full(capacity, LEAF, dtype=np.int32), np.zeros(capacity), np.full(capacity, LEAF, dtype=np.int32),
            np.full(capacity, LEAF, dtype=np.int32), np.zeros(capacity), np.zeros(capacity, dtype=np.int64))


@numba.njit(cache=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _predict(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def check_xy(X: np.ndarray, y: np.ndarray, min_rows: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise ValueError(f"expected X [N,F] and y [N], got {X.shape} and {y.shape}")
    if len(y) < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {len(y)}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    return X, y
