"""Per-series transforms: min-max scaling, cyclic calendar features, gap filling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nwp import fill_from_neighbours


class ConstantSeriesError(ValueError):
    """Min-max anchors coincide, so the scaling is undefined."""


@dataclass
class PowerSeries:
    """Hourly output of one farm in raw units, plus its min-max normalised copy."""

    farm_id: int
    timestamps: np.ndarray
    power: np.ndarray
    normalized: np.ndarray | None = None
    x_min: float | None = None
    x_max: float | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        self.power = np.asarray(self.power, dtype=float)
        if len(self.power) != len(self.timestamps):
            raise ValueError("power and timestamps differ in length")

    def normalize(self, fit_mask: np.ndarray | None = None) -> "PowerSeries":
        """Fit anchors on ``fit_mask`` rows (all rows if None) and fill ``normalized``."""
        self.normalized, anchors = minmax_fit_transform(self.power, fit_mask)
        self.x_min, self.x_max = anchors.x_min, anchors.x_max
        return self


@dataclass(frozen=True)
class MinMaxAnchors:
    x_min: np.ndarray | float
    x_max: np.ndarray | float

    def transform(self, x: np.ndarray) -> np.ndarray:
        # values outside the fitted range are left unclipped
        return (np.asarray(x, dtype=float) - self.x_min) / (self.x_max - self.x_min)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * (self.x_max - self.x_min) + self.x_min

    def to_dict(self) -> dict:
        return {"x_min": np.asarray(self.x_min).tolist(), "x_max": np.asarray(self.x_max).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxAnchors":
        lo, hi = np.asarray(d["x_min"], dtype=float), np.asarray(d["x_max"], dtype=float)
        return cls(lo if lo.ndim else float(lo), hi if hi.ndim else float(hi))


def fit_minmax(x: np.ndarray, fit_mask: np.ndarray | None = None, channel_axis: int | None = None) -> MinMaxAnchors:
    """Anchors from the rows of ``x`` selected by ``fit_mask`` (axis 0), ignoring NaN.

    With ``channel_axis`` set, one pair of anchors is kept per channel and
    shared over every other axis.
    """
    x = np.asarray(x, dtype=float)
    rows = x if fit_mask is None else x[np.asarray(fit_mask, dtype=bool)]
    if rows.size == 0:
        raise ValueError("no rows to fit min-max anchors on")
    if channel_axis is None:
        lo, hi = float(np.nanmin(rows)), float(np.nanmax(rows))
        if not hi > lo:
            raise ConstantSeriesError(f"constant series (x_min == x_max == {lo})")
        return MinMaxAnchors(lo, hi)
    axes = tuple(i for i in range(rows.ndim) if i != channel_axis % rows.ndim)
    lo, hi = np.nanmin(rows, axis=axes), np.nanmax(rows, axis=axes)
    if np.any(hi <= lo):
        bad = np.flatnonzero(hi <= lo).tolist()
        raise ConstantSeriesError(f"constant channels {bad}")
    return MinMaxAnchors(lo, hi)


def minmax_fit_transform(x: np.ndarray, fit_mask: np.ndarray | None = None,
                         channel_axis: int | None = None) -> tuple[np.ndarray, MinMaxAnchors]:
    """Scale ``x`` by anchors fitted on the masked (training) rows only."""
    anchors = fit_minmax(x, fit_mask, channel_axis)
    return anchors.transform(x), anchors


def cyclic_time_features(timestamps, month_period: float = 12.0) -> np.ndarray:
    """``[..., 4]`` array of (moy_sin, moy_cos, hod_sin, hod_cos).

    ``moy`` is the calendar month 1..12 and ``hod`` the UTC hour 0..23.
    """
    ts = np.asarray(timestamps, dtype="datetime64[h]")
    months = ts.astype("datetime64[M]")
    moy = (months.astype("int64") % 12 + 1).astype(float)
    hod = (ts - ts.astype("datetime64[D]")).astype("int64").astype(float)
    a = moy * (2.0 * np.pi / month_period)
    b = hod * (2.0 * np.pi / 24.0)
    return np.stack([np.sin(a), np.cos(a), np.sin(b), np.cos(b)], axis=-1)


def fill_short_gaps(values: np.ndarray, max_gap: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Fill NaN runs of at most ``max_gap`` rows with the neighbour mean.

    Returns ``(filled, valid)`` where ``valid`` marks rows that are observed
    or were filled; longer runs stay NaN and invalid.
    """
    values = np.asarray(values, dtype=float)
    missing = np.isnan(values).reshape(len(values), -1).any(axis=1)
    if not missing.any():
        return values.copy(), np.ones(len(values), dtype=bool)
    filled = fill_from_neighbours(np.where(np.isnan(values), 0.0, values), ~missing)
    valid = ~missing
    # locate NaN runs; only interior runs no longer than max_gap are filled
    edges = np.diff(np.concatenate([[0], missing.astype(int), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    out = values.copy()
    for s, e in zip(starts, stops):
        if e - s <= max_gap and s > 0 and e < len(values):
            out[s:e] = filled[s:e]
            valid[s:e] = True
    return out, valid
