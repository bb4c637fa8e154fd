"""Gridded NWP wind fields: source descriptions, interpolation, wind speed, level selection."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

HOUR = np.timedelta64(1, "h")


@dataclass(frozen=True)
class NwpSourceSpec:
    name: str
    cadence_hours: int
    lat_count: int
    lon_count: int
    raw_level_count: int
    selected_level_count: int

    def __post_init__(self):
        counts = (self.cadence_hours, self.lat_count, self.lon_count, self.raw_level_count, self.selected_level_count)
        if min(counts) < 1:
            raise ValueError(f"{self.name}: all counts must be positive")
        if self.selected_level_count > self.raw_level_count:
            raise ValueError(f"{self.name}: cannot select {self.selected_level_count} of {self.raw_level_count} levels")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.lat_count, self.lon_count

    @property
    def feature_width(self) -> int:
        return self.lat_count * self.lon_count * self.selected_level_count

    def to_dict(self) -> dict:
        return dict(vars(self))


GFS = NwpSourceSpec("GFS", cadence_hours=3, lat_count=4, lon_count=4, raw_level_count=24, selected_level_count=9)
ARPEGE = NwpSourceSpec("ARPEGE", cadence_hours=1, lat_count=5, lon_count=5, raw_level_count=27, selected_level_count=11)
SOURCES = {"GFS": GFS, "ARPEGE": ARPEGE}


@dataclass
class NwpCube:
    """Wind components ``u``, ``v`` of shape ``[time, lat, lon, level]`` in m/s."""

    source: NwpSourceSpec
    timestamps: np.ndarray  # datetime64[h], strictly increasing
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        expected = (len(self.timestamps), self.source.lat_count, self.source.lon_count)
        if self.u.shape != self.v.shape:
            raise ValueError(f"u {self.u.shape} and v {self.v.shape} differ")
        if self.u.shape[:3] != expected:
            raise ValueError(f"{self.source.name} cube has shape {self.u.shape}, expected {expected} + levels")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= np.timedelta64(0, "h")):
            raise ValueError("cube timestamps must be strictly increasing")

    @property
    def level_count(self) -> int:
        return self.u.shape[3]

    def is_hourly(self) -> bool:
        return len(self.timestamps) < 2 or bool(np.all(np.diff(self.timestamps) == HOUR))


def wind_speed(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Elementwise magnitude ``sqrt(u^2 + v^2)``."""
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"u shape {u.shape} != v shape {v.shape}")
    return np.hypot(u, v)


def fill_from_neighbours(values: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Replace unobserved rows (axis 0) by the mean of the nearest observed rows on either side.

    Rows before the first or after the last observation copy their single
    neighbour. ``observed`` is a boolean mask over axis 0.
    """
    observed = np.asarray(observed, dtype=bool)
    pos = np.flatnonzero(observed)
    if pos.size == 0:
        raise ValueError("no observed values to fill from")
    idx = np.arange(len(values))
    after = np.searchsorted(pos, idx, side="left")
    prev_i = pos[np.clip(after - 1, 0, pos.size - 1)]
    next_i = pos[np.clip(after, 0, pos.size - 1)]
    # before the first observation both neighbours collapse to the first one
    prev_i = np.where(after == 0, next_i, prev_i)
    next_i = np.where(after == pos.size, prev_i, next_i)
    filled = 0.5 * (values[prev_i] + values[next_i])
    filled[observed] = values[observed]
    return filled


def interpolate_gfs(cube: NwpCube, timestamps: np.ndarray | None = None) -> NwpCube:
    """Resample a 3-hourly cube to hourly resolution.

    Each missing hour gets the mean of the nearest preceding and following
    observed readings; observed hours are kept unchanged. ``timestamps`` sets
    the hourly target range (default: first to last observation); hours
    outside the observed span copy the single available neighbour.
    """
    if len(cube.timestamps) < 2:
        raise ValueError("interpolation needs at least two observed readings")
    if cube.is_hourly() and timestamps is None:
        return replace(cube, u=cube.u.copy(), v=cube.v.copy())
    hours = cube.timestamps.astype("int64")
    if not cube.is_hourly() and np.any(hours % cube.source.cadence_hours != 0):
        raise ValueError(f"observed entries must fall on hours divisible by {cube.source.cadence_hours}")
    if timestamps is None:
        timestamps = np.arange(cube.timestamps[0], cube.timestamps[-1] + HOUR, HOUR)
    timestamps = np.asarray(timestamps, dtype="datetime64[h]")
    target = timestamps.astype("int64")
    # extend onto the union grid, fill, then cut down to the requested hours
    grid = np.union1d(target, hours)
    slot = np.searchsorted(grid, hours)
    observed = np.zeros(len(grid), dtype=bool)
    observed[slot] = True
    out = []
    for comp in (cube.u, cube.v):
        full = np.zeros((len(grid),) + comp.shape[1:], dtype=comp.dtype)
        full[slot] = comp
        out.append(fill_from_neighbours(full, observed)[np.searchsorted(grid, target)])
    hourly = replace(cube.source, cadence_hours=1)
    return NwpCube(hourly, timestamps, out[0], out[1])


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0 when either side has zero variance."""
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(np.dot(a, b) / denom) if denom > 0 else 0.0


def level_correlations(speed: np.ndarray, power: np.ndarray) -> np.ndarray:
    """Correlation of each level's spatial-mean speed ``speed[T,lat,lon,L]`` with ``power[T]``."""
    means = speed.mean(axis=(1, 2))
    return np.array([pearson(means[:, level], power) for level in range(means.shape[1])])


def rank_levels(correlations: np.ndarray, k: int) -> list[int]:
    """Indices of the ``k`` largest ``|correlation|``; ties go to the lower level index."""
    if not 1 <= k <= len(correlations):
        raise ValueError(f"k must lie in [1, {len(correlations)}], got {k}")
    order = sorted(range(len(correlations)), key=lambda i: (-abs(correlations[i]), i))
    return order[:k]


def select_levels_by_correlation(cube: NwpCube, power_timestamps: np.ndarray, power: np.ndarray, k: int,
                                 fit_end: np.datetime64 | None = None) -> list[int]:
    """Rank the cube's levels by |Pearson r| between spatial-mean wind speed and power.

    Only timestamps present in both inputs, with finite power, and strictly
    before ``fit_end`` enter the statistic. Returns ``k`` level indices, best first.
    """
    if k > cube.level_count:
        raise ValueError(f"k={k} exceeds the {cube.level_count} available levels")
    power_timestamps = np.asarray(power_timestamps, dtype="datetime64[h]")
    common, ci, pi = np.intersect1d(cube.timestamps, power_timestamps, return_indices=True)
    keep = np.isfinite(power[pi])
    if fit_end is not None:
        keep &= common < np.datetime64(fit_end, "h")
    if keep.sum() < 2:
        raise ValueError("fewer than two overlapping timestamps to correlate")
    speed = wind_speed(cube.u[ci[keep]], cube.v[ci[keep]])
    return rank_levels(level_correlations(speed, power[pi[keep]]), k)
