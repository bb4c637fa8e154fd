"""Model-ready sample windows over hourly farm panels.

A :class:`WindowedDataset` stores only ``(panel, start)`` pairs; the dense
arrays (``x_lags``, ``x_gfs`` ...) are gathered from the shared hourly
:class:`FarmPanel` on access. This keeps stride-1 datasets over years of
hourly data small: a materialised sample of both grids is ~10k floats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nwp import ARPEGE, GFS

N_FARMS = 7
LOOKBACK = 48
HORIZON = 24


@dataclass
class FarmPanel:
    """Hourly, aligned, normalised inputs of one farm."""

    farm_id: int
    timestamps: np.ndarray  # datetime64[h], hourly and contiguous
    power: np.ndarray  # [T]
    gfs: np.ndarray  # [T, lat, lon, level]
    arp: np.ndarray  # [T, lat, lon, level]
    time: np.ndarray  # [T, 4]
    valid: np.ndarray | None = None  # [T] bool; hours usable inside a window

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        T = len(self.timestamps)
        if self.valid is None:
            self.valid = np.isfinite(self.power)
        for name in ("power", "gfs", "arp", "time", "valid"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"panel field {name} has length {len(getattr(self, name))}, expected {T}")
        if T > 1 and np.any(np.diff(self.timestamps) != np.timedelta64(1, "h")):
            raise ValueError("panel timestamps must be hourly and contiguous")


@dataclass
class WindowedDataset:
    panels: list[FarmPanel]
    panel_index: np.ndarray  # [N] which panel each sample comes from
    start: np.ndarray  # [N] hour offset of the first lag inside its panel
    lookback: int = LOOKBACK
    horizon: int = HORIZON
    n_farms: int = N_FARMS

    def __post_init__(self):
        self.panel_index = np.asarray(self.panel_index, dtype=np.int64)
        self.start = np.asarray(self.start, dtype=np.int64)
        if self.panel_index.shape != self.start.shape:
            raise ValueError("panel_index and start must align")

    def __len__(self) -> int:
        return len(self.start)

    # ------------------------------------------------------------ gathering
    def _gather(self, name: str, offset: int, length: int, idx: np.ndarray | None) -> np.ndarray:
        pidx = self.panel_index if idx is None else self.panel_index[idx]
        starts = self.start if idx is None else self.start[idx]
        first = getattr(self.panels[0], name)
        out = np.empty((len(starts), length) + first.shape[1:], dtype=first.dtype)
        steps = np.arange(length)
        for p in np.unique(pidx):
            rows = np.flatnonzero(pidx == p)
            src = getattr(self.panels[p], name)
            out[rows] = src[(starts[rows] + offset)[:, None] + steps]
        return out

    def lags(self, idx=None) -> np.ndarray:
        return self._gather("power", 0, self.lookback, idx)[..., None]

    def gfs(self, idx=None) -> np.ndarray:
        return self._gather("gfs", self.lookback, self.horizon, idx)

    def arp(self, idx=None) -> np.ndarray:
        return self._gather("arp", self.lookback, self.horizon, idx)

    def time(self, idx=None) -> np.ndarray:
        return self._gather("time", self.lookback, self.horizon, idx)

    def targets(self, idx=None) -> np.ndarray:
        return self._gather("power", self.lookback, self.horizon, idx)

    def farm_ids(self, idx=None) -> np.ndarray:
        ids = np.array([p.farm_id for p in self.panels], dtype=np.int64)[self.panel_index]
        return ids if idx is None else ids[idx]

    def farm_onehot(self, idx=None) -> np.ndarray:
        ids = self.farm_ids(idx)
        out = np.zeros((len(ids), self.n_farms))
        out[np.arange(len(ids)), ids] = 1.0
        return out

    def sample_timestamps(self, idx=None) -> np.ndarray:
        """Timestamp of the first target hour of each sample."""
        pidx = self.panel_index if idx is None else self.panel_index[idx]
        starts = self.start if idx is None else self.start[idx]
        out = np.empty(len(starts), dtype="datetime64[h]")
        for p in np.unique(pidx):
            rows = pidx == p
            out[rows] = self.panels[p].timestamps[starts[rows] + self.lookback]
        return out

    def target_timestamps(self, idx=None) -> np.ndarray:
        return self.sample_timestamps(idx)[:, None] + np.arange(self.horizon).astype("timedelta64[h]")

    def lag_timestamps(self, idx=None) -> np.ndarray:
        first_lag = self.sample_timestamps(idx) - np.timedelta64(self.lookback, "h")
        return first_lag[:, None] + np.arange(self.lookback).astype("timedelta64[h]")

    def batch(self, idx=None) -> dict[str, np.ndarray]:
        """All model inputs and targets for the given sample indices."""
        return {"x_lags": self.lags(idx), "x_gfs": self.gfs(idx), "x_arp": self.arp(idx),
                "x_time": self.time(idx), "x_farm": self.farm_onehot(idx), "y": self.targets(idx)}

    # fixed-name views used by callers that want whole arrays
    x_lags = property(lambda self: self.lags())
    x_gfs = property(lambda self: self.gfs())
    x_arp = property(lambda self: self.arp())
    x_time = property(lambda self: self.time())
    x_farm = property(lambda self: self.farm_onehot())
    y = property(lambda self: self.targets())

    # --------------------------------------------------------- restructuring
    def take(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowedDataset(self.panels, self.panel_index[idx], self.start[idx],
                               self.lookback, self.horizon, self.n_farms)

    def for_farm(self, farm_id: int) -> "WindowedDataset":
        return self.take(np.flatnonzero(self.farm_ids() == farm_id))

    def by_farm(self) -> dict[int, "WindowedDataset"]:
        return {int(f): self.for_farm(int(f)) for f in np.unique(self.farm_ids())}

    def chronological_order(self) -> np.ndarray:
        return np.lexsort((self.panel_index, self.sample_timestamps()))


def window_samples(panel: FarmPanel, lookback: int = LOOKBACK, horizon: int = HORIZON, stride: int = 1,
                   n_farms: int = N_FARMS) -> WindowedDataset:
    """Slide a ``lookback + horizon`` window over the panel with the given stride.

    Yields ``floor((T - lookback - horizon)/stride) + 1`` candidate windows;
    windows touching an invalid hour are dropped.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    T = len(panel.timestamps)
    span = lookback + horizon
    if T < span:
        raise ValueError(f"series of length {T} is shorter than lookback + horizon = {span}")
    starts = np.arange(0, T - span + 1, stride)
    bad = np.concatenate([[0], np.cumsum(~panel.valid)])
    ok = bad[starts + span] - bad[starts] == 0
    return WindowedDataset([panel], np.zeros(ok.sum(), dtype=np.int64), starts[ok], lookback, horizon, n_farms)


def concat_farms_global(datasets: list[WindowedDataset]) -> WindowedDataset:
    """Stack datasets along the sample axis; farm identity stays in ``x_farm``."""
    if not datasets:
        raise ValueError("nothing to concatenate")
    ref = datasets[0]
    panels: list[FarmPanel] = []
    pidx, starts = [], []
    for ds in datasets:
        if (ds.lookback, ds.horizon, ds.n_farms) != (ref.lookback, ref.horizon, ref.n_farms):
            raise ValueError("datasets disagree on lookback/horizon/farm count")
        for p in ds.panels:
            if p.gfs.shape[1:] != ref.panels[0].gfs.shape[1:] or p.arp.shape[1:] != ref.panels[0].arp.shape[1:]:
                raise ValueError(f"farm {p.farm_id} grid shapes differ from farm {ref.panels[0].farm_id}")
        pidx.append(ds.panel_index + len(panels))
        starts.append(ds.start)
        panels.extend(ds.panels)
    return WindowedDataset(panels, np.concatenate(pidx), np.concatenate(starts), ref.lookback, ref.horizon, ref.n_farms)


# ------------------------------------------------------------------ splitting
@dataclass(frozen=True)
class SplitSpec:
    test_days: int = 120
    val_fraction: float = 0.10
    merge_after_tuning: bool = True


@dataclass
class Split:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset

    @property
    def merged(self) -> WindowedDataset:
        """Train and validation together, for the final refit."""
        return _concat_same_panels(self.train, self.val)


def _concat_same_panels(a: WindowedDataset, b: WindowedDataset) -> WindowedDataset:
    return WindowedDataset(a.panels, np.concatenate([a.panel_index, b.panel_index]),
                           np.concatenate([a.start, b.start]), a.lookback, a.horizon, a.n_farms)


def _split_indices(starts: np.ndarray, horizon: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices (into ``starts``, assumed sorted) of train, val and test samples."""
    test: list[int] = []
    limit = np.iinfo(np.int64).max
    for i in range(len(starts) - 1, -1, -1):
        if len(test) == spec.test_days:
            break
        if starts[i] <= limit:
            test.append(i)
            limit = starts[i] - horizon
    if len(test) < spec.test_days:
        raise ValueError(f"only {len(test)} non-overlapping test windows available, need {spec.test_days}")
    test_idx = np.array(test[::-1], dtype=np.int64)
    first_test = starts[test_idx[0]]
    # training targets must end before the first test target
    pool = np.flatnonzero(starts <= first_test - horizon)
    n_val = int(np.floor(round(len(pool) * spec.val_fraction, 9)))
    if len(pool) - n_val < 1:
        raise ValueError("no training samples left before the test period")
    return pool[:len(pool) - n_val], pool[len(pool) - n_val:], test_idx


def split_train_val_test(dataset: WindowedDataset, spec: SplitSpec = SplitSpec()) -> Split:
    """Chronological split, applied per farm and recombined.

    Test: the last ``test_days`` non-overlapping horizon windows.
    Validation: the last ``val_fraction`` of the remaining samples.
    """
    parts = {"train": [], "val": [], "test": []}
    for p in np.unique(dataset.panel_index):
        rows = np.flatnonzero(dataset.panel_index == p)
        rows = rows[np.argsort(dataset.start[rows], kind="stable")]
        tr, va, te = _split_indices(dataset.start[rows], dataset.horizon, spec)
        parts["train"].append(rows[tr])
        parts["val"].append(rows[va])
        parts["test"].append(rows[te])
    return Split(*(dataset.take(np.concatenate(parts[k])) for k in ("train", "val", "test")))


def holdout_start(panel: FarmPanel, spec: SplitSpec = SplitSpec(), lookback: int = LOOKBACK,
                      horizon: int = HORIZON) -> np.datetime64:
    """First target hour of the test period for a panel; statistics are fitted strictly before it."""
    ds = window_samples(panel, lookback, horizon, stride=1)
    split = split_train_val_test(ds, spec)
    return split.test.sample_timestamps().min()


# ----------------------------------------------------------- tabular features
def tabular_column_names(gfs_shape=(GFS.lat_count, GFS.lon_count, GFS.selected_level_count),
                         arp_shape=(ARPEGE.lat_count, ARPEGE.lon_count, ARPEGE.selected_level_count),
                         n_farms: int = N_FARMS, n_lags: int = 0) -> list[str]:
    """Column order: GFS grid, ARPEGE grid (both lat, lon, level), time, farm, lags (oldest first)."""
    names = [f"gfs[{i},{j},{k}]" for i in range(gfs_shape[0]) for j in range(gfs_shape[1]) for k in range(gfs_shape[2])]
    names += [f"arp[{i},{j},{k}]" for i in range(arp_shape[0]) for j in range(arp_shape[1]) for k in range(arp_shape[2])]
    names += ["moy_sin", "moy_cos", "hod_sin", "hod_cos"]
    names += [f"farm_{f}" for f in range(n_farms)]
    names += [f"lag_{n_lags - i}" for i in range(n_lags)]
    return names


def tabular_features(dataset: WindowedDataset, include_lags: bool = False, n_lags: int | None = None,
                     step: int | None = None, idx=None) -> np.ndarray:
    """Flat design matrix for the direct multi-step baselines.

    With ``step`` given, one row per sample for that horizon step (``[N, F]``);
    otherwise ``N*24`` rows ordered sample-major, step-minor. Lag columns hold
    the last ``n_lags`` (default: the full lookback) power values.
    """
    n = len(dataset) if idx is None else len(np.atleast_1d(idx))
    steps = range(dataset.horizon) if step is None else [step]
    gfs, arp, time = dataset.gfs(idx), dataset.arp(idx), dataset.time(idx)
    blocks = [gfs[:, steps].reshape(n, len(steps), -1), arp[:, steps].reshape(n, len(steps), -1),
              time[:, steps], np.repeat(dataset.farm_onehot(idx)[:, None, :], len(steps), axis=1)]
    if include_lags:
        k = dataset.lookback if n_lags is None else n_lags
        lags = dataset.lags(idx)[:, dataset.lookback - k:, 0]
        blocks.append(np.repeat(lags[:, None, :], len(steps), axis=1))
    out = np.concatenate(blocks, axis=2)
    return out[:, 0, :] if step is not None else out.reshape(n * len(steps), -1)
