"""Extremely randomized regression trees (no bootstrap, one random cut per candidate feature)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .tree import Tree, allocate_nodes, check_xy


@dataclass(frozen=True)
class EtParams:
    n_trees: int = 120
    max_features: int | str = "sqrt"
    max_depth: int | None = None
    min_samples_split: int = 2

    def __post_init__(self):
        if self.n_trees < 1 or self.min_samples_split < 2:
            raise ValueError(f"invalid extra-trees parameters {self}")

    def features_per_split(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.isqrt(n_features)))
        k = int(self.max_features)
        if not 1 <= k:
            raise ValueError("max_features must be >= 1")
        return min(k, n_features)


@dataclass
class EtModel:
    trees: list[Tree]
    params: EtParams = field(default_factory=EtParams)
    seeds: list[int] = field(default_factory=list)

    def tree_outputs(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return np.array([t.predict(X) for t in self.trees])

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {"model_type": "extra_trees", "params": asdict(self.params), "seeds": list(self.seeds),
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "EtModel":
        return cls([Tree.from_dict(t) for t in d["trees"]], EtParams(**d["params"]), list(d["seeds"]))


@numba.njit(cache=True)
def _grow(X, y, k_features, max_depth, min_split, seed, feature, threshold, left, right, value, n_samples):
    np.random.seed(seed)
    n_rows, n_feat = X.shape
    rows = np.arange(n_rows)
    perm = np.arange(n_feat)
    stack_node = np.empty(n_rows * 2, dtype=np.int64)
    stack_start = np.empty(n_rows * 2, dtype=np.int64)
    stack_end = np.empty(n_rows * 2, dtype=np.int64)
    stack_depth = np.empty(n_rows * 2, dtype=np.int64)
    top = 0
    stack_node[0], stack_start[0], stack_end[0], stack_depth[0] = 0, 0, n_rows, 0
    top = 1
    count = 1
    while top > 0:
        top -= 1
        node, s, e, d = stack_node[top], stack_start[top], stack_end[top], stack_depth[top]
        n = e - s
        total = 0.0
        y_lo, y_hi = np.inf, -np.inf
        for k in range(s, e):
            v = y[rows[k]]
            total += v
            y_lo = min(y_lo, v)
            y_hi = max(y_hi, v)
        n_samples[node] = n
        value[node] = total / n
        if n < min_split or y_lo == y_hi or (max_depth >= 0 and d >= max_depth):
            continue
        # draw candidate features without replacement; constant ones do not use up the budget
        best_gain, best_f, best_thr = -np.inf, -1, 0.0
        drawn, found = 0, 0
        while found < k_features and drawn < n_feat:
            j = drawn + np.random.randint(n_feat - drawn)
            perm[drawn], perm[j] = perm[j], perm[drawn]
            f = perm[drawn]
            drawn += 1
            lo, hi = np.inf, -np.inf
            for k in range(s, e):
                v = X[rows[k], f]
                lo = min(lo, v)
                hi = max(hi, v)
            if not lo < hi:
                continue
            found += 1
            thr = lo + np.random.random() * (hi - lo)
            if thr >= hi:
                thr = lo
            s_left, n_left = 0.0, 0
            for k in range(s, e):
                if X[rows[k], f] <= thr:
                    s_left += y[rows[k]]
                    n_left += 1
            s_right = total - s_left
            gain = s_left * s_left / n_left + s_right * s_right / (n - n_left) - total * total / n
            if gain > best_gain or (gain == best_gain and (f < best_f or (f == best_f and thr < best_thr))):
                best_gain, best_f, best_thr = gain, f, thr
        if best_f < 0:
            continue
        # in-place partition of rows[s:e]
        i, j = s, e - 1
        while i <= j:
            if X[rows[i], best_f] <= best_thr:
                i += 1
            else:
                rows[i], rows[j] = rows[j], rows[i]
                j -= 1
        feature[node], threshold[node] = best_f, best_thr
        left[node], right[node] = count, count + 1
        stack_node[top], stack_start[top], stack_end[top], stack_depth[top] = count + 1, i, e, d + 1
        stack_node[top + 1], stack_start[top + 1], stack_end[top + 1], stack_depth[top + 1] = count, s, i, d + 1
        top += 2
        count += 2
    return count


def grow_extra_tree(X: np.ndarray, y: np.ndarray, k_features: int, seed: int, max_depth: int | None = None,
                    min_samples_split: int = 2) -> Tree:
    arrays = allocate_nodes(2 * len(y) - 1)
    count = _grow(X, y, k_features, -1 if max_depth is None else max_depth, min_samples_split, seed, *arrays)
    return Tree.from_arrays(arrays, count)


def fit_extra_trees(X: np.ndarray, y: np.ndarray, params: EtParams = EtParams(), rng=None) -> EtModel:
    """Forest of fully grown extra-trees, each on all rows with its own seed drawn from ``rng``."""
    X, y = check_xy(X, y, 2)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=params.n_trees)]
    k = params.features_per_split(X.shape[1])
    trees = [grow_extra_tree(X, y, k, s, params.max_depth, params.min_samples_split) for s in seeds]
    return EtModel(trees, params, seeds)
