"""Leaf-wise gradient-boosted regression trees with exact split search.

Each stage fits a tree to the current residuals. The tree grows by always
splitting the leaf whose best split has the largest variance-reduction gain
``S_L^2/n_L + S_R^2/n_R - S^2/n`` until ``num_leaves`` is reached or no leaf
admits a split with positive gain that leaves ``min_child_samples`` rows on
both sides. Candidate thresholds are midpoints between adjacent distinct
values of a feature, so row order never affects the fit.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .tree import Tree, allocate_nodes, check_xy


@dataclass(frozen=True)
class GbmParams:
    n_estimators: int = 100
    learning_rate: float = 0.07
    num_leaves: int = 90
    min_child_samples: int = 22
    max_depth: int | None = None

    def __post_init__(self):
        if self.n_estimators < 0 or self.num_leaves < 2 or self.min_child_samples < 1:
            raise ValueError(f"invalid GBM parameters {self}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")


@dataclass
class GbmModel:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    params: GbmParams = field(default_factory=GbmParams)
    train_loss: list[float] = field(default_factory=list)  # MSE after each stage, index 0 = base only

    def tree_outputs(self, X: np.ndarray) -> np.ndarray:
        """``[n_trees, N]`` raw outputs of the individual trees."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        return np.array([t.predict(X) for t in self.trees]).reshape(len(self.trees), len(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return self.base_score + self.learning_rate * total

    def to_dict(self) -> dict:
        return {"model_type": "gbm", "params": asdict(self.params), "base_score": self.base_score,
                "learning_rate": self.learning_rate, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "GbmModel":
        return cls(float(d["base_score"]), float(d["learning_rate"]), [Tree.from_dict(t) for t in d["trees"]],
                   GbmParams(**d["params"]))


@numba.njit(cache=True)
def _best_split(xs, gs, start, end, min_child):
    """Best (gain, feature, threshold, n_left) over all features for the segment ``[start, end)``.

    ``xs[f]`` and ``gs[f]`` hold feature values and residuals with each
    leaf's segment sorted by feature ``f``.
    """
    n = end - start
    best_gain, best_f, best_thr, best_nl = 0.0, -1, 0.0, 0
    if n < 2 * min_child:
        return best_gain, best_f, best_thr, best_nl
    total = 0.0
    for k in range(start, end):
        total += gs[0, k]
    parent = total * total / n
    for f in range(xs.shape[0]):
        s_left = 0.0
        for k in range(start, end - min_child):
            s_left += gs[f, k]
            nl = k - start + 1
            if nl < min_child:
                continue
            xi = xs[f, k]
            xn = xs[f, k + 1]
            if not xi < xn:
                continue
            s_right = total - s_left
            gain = s_left * s_left / nl + s_right * s_right / (n - nl) - parent
            if gain > best_gain:
                thr = xi + 0.5 * (xn - xi)
                if thr >= xn:
                    thr = xi
                best_gain, best_f, best_thr, best_nl = gain, f, thr, nl
    return best_gain, best_f, best_thr, best_nl


@numba.njit(cache=True)
def _partition(order, xs, gs, start, end, nl, goes_left, buf_i, buf_x, buf_g):
    """Stable split of every feature's segment into left rows then right rows."""
    for f in range(order.shape[0]):
        li, ri = start, 0
        for k in range(start, end):
            row = order[f, k]
            if goes_left[row]:
                order[f, li], xs[f, li], gs[f, li] = row, xs[f, k], gs[f, k]
                li += 1
            else:
                buf_i[ri], buf_x[ri], buf_g[ri] = row, xs[f, k], gs[f, k]
                ri += 1
        for k in range(ri):
            order[f, li + k], xs[f, li + k], gs[f, li + k] = buf_i[k], buf_x[k], buf_g[k]


@numba.njit(cache=True)
def _grow(order, xs, gs, num_leaves, min_child, max_depth, feature, threshold, left, right, value, n_samples):
    n_rows = order.shape[1]
    goes_left = np.zeros(n_rows, dtype=np.bool_)
    buf_i = np.empty(n_rows, dtype=order.dtype)
    buf_x = np.empty(n_rows)
    buf_g = np.empty(n_rows)
    # per-node bookkeeping; only leaves carry a pending split
    seg_start = np.zeros(2 * num_leaves, dtype=np.int64)
    seg_end = np.zeros(2 * num_leaves, dtype=np.int64)
    depth = np.zeros(2 * num_leaves, dtype=np.int64)
    gain = np.zeros(2 * num_leaves)
    split_f = np.full(2 * num_leaves, -1, dtype=np.int64)
    split_thr = np.zeros(2 * num_leaves)
    split_nl = np.zeros(2 * num_leaves, dtype=np.int64)

    seg_start[0], seg_end[0] = 0, n_rows
    count, leaves = 1, 1
    if max_depth != 0:
        gain[0], split_f[0], split_thr[0], split_nl[0] = _best_split(xs, gs, 0, n_rows, min_child)
    while leaves < num_leaves:
        best = -1
        for node in range(count):
            if feature[node] == -1 and split_f[node] >= 0 and (best < 0 or gain[node] > gain[best]):
                best = node
        if best < 0:
            break
        s, e, nl, f = seg_start[best], seg_end[best], split_nl[best], split_f[best]
        for k in range(s, e):
            goes_left[order[f, k]] = k < s + nl
        _partition(order, xs, gs, s, e, nl, goes_left, buf_i, buf_x, buf_g)
        feature[best], threshold[best] = f, split_thr[best]
        for child, cs, ce in ((count, s, s + nl), (count + 1, s + nl, e)):
            seg_start[child], seg_end[child] = cs, ce
            depth[child] = depth[best] + 1
            if max_depth < 0 or depth[child] < max_depth:
                gain[child], split_f[child], split_thr[child], split_nl[child] = _best_split(
                    xs, gs, cs, ce, min_child)
        left[best], right[best] = count, count + 1
        count += 2
        leaves += 1
    for node in range(count):
        s, e = seg_start[node], seg_end[node]
        n_samples[node] = e - s
        if feature[node] == -1:
            acc = 0.0
            for k in range(s, e):
                acc += gs[0, k]
            value[node] = acc / (e - s)
    return count


class SortedDesign:
    """Per-column sort of a design matrix, computed once per fit and reused by every tree."""

    def __init__(self, X: np.ndarray):
        dtype = np.int32 if len(X) < 2 ** 31 else np.int64
        self.order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(dtype))
        self.values = np.ascontiguousarray(np.take_along_axis(X.T, self.order, axis=1))


def grow_tree(X: np.ndarray, g: np.ndarray, num_leaves: int, min_child_samples: int, max_depth: int | None = None,
              design: SortedDesign | None = None) -> Tree:
    """One leaf-wise tree fitted to ``g`` by exact split search."""
    design = SortedDesign(X) if design is None else design
    order, xs = design.order.copy(), design.values.copy()
    gs = g[order]
    arrays = allocate_nodes(2 * num_leaves - 1)
    count = _grow(order, xs, gs, num_leaves, min_child_samples, -1 if max_depth is None else max_depth, *arrays)
    return Tree.from_arrays(arrays, count)


def fit_gbm(X: np.ndarray, y: np.ndarray, params: GbmParams = GbmParams(), rng=None) -> GbmModel:
    """Stagewise least-squares boosting; ``rng`` is accepted for interface symmetry (the fit is deterministic)."""
    X, y = check_xy(X, y, 2 * params.min_child_samples)
    base = float(np.mean(y))
    fitted = np.full(len(y), base)
    design = SortedDesign(X)
    model = GbmModel(base, params.learning_rate, [], params, [float(np.mean((y - fitted) ** 2))])
    for _ in range(params.n_estimators):
        residual = y - fitted
        tree = grow_tree(X, residual, params.num_leaves, params.min_child_samples, params.max_depth, design)
        model.trees.append(tree)
        fitted = fitted + params.learning_rate * tree.predict(X)
        model.train_loss.append(float(np.mean((y - fitted) ** 2)))
    return model
