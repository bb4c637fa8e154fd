"""CSV/JSON/npz persistence and the raw-to-panel preparation step.

Raw layout (one directory per dataset)::

    manifest.json
    farm_<id>_power.csv          timestamp,power
    farm_<id>_gfs.csv            timestamp,level,lat_idx,lon_idx,u,v
    farm_<id>_arpege.csv         same columns, hourly

Prepared layout::

    prepared.json                anchors, selected levels, holdout start per farm
    farm_<id>.npz                FarmPanel arrays (normalised)
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .features import MinMaxAnchors, cyclic_time_features, fill_short_gaps, fit_minmax
from .nwp import ARPEGE, GFS, SOURCES, NwpCube, NwpSourceSpec, interpolate_gfs, level_correlations, rank_levels, \
    wind_speed
from .windows import HORIZON, LOOKBACK, FarmPanel, SplitSpec, holdout_start

MANIFEST_VERSION = 1
TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


# ------------------------------------------------------------------ CSV files
def _format_ts(ts: np.ndarray) -> np.ndarray:
    return pd.DatetimeIndex(np.asarray(ts, dtype="datetime64[s]")).strftime(TS_FORMAT).to_numpy()


def _parse_ts(col: pd.Series) -> np.ndarray:
    parsed = pd.to_datetime(col, utc=True, format="ISO8601")
    return parsed.dt.tz_localize(None).to_numpy().astype("datetime64[h]")


def write_power_csv(path, timestamps: np.ndarray, power: np.ndarray) -> None:
    frame = pd.DataFrame({"timestamp": _format_ts(timestamps), "power": np.asarray(power, dtype=float)})
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def read_power_csv(path) -> tuple[np.ndarray, np.ndarray]:
    frame = pd.read_csv(path)
    if list(frame.columns) != ["timestamp", "power"]:
        raise ValueError(f"{path}: expected header timestamp,power, got {','.join(frame.columns)}")
    ts = _parse_ts(frame["timestamp"])
    order = np.argsort(ts, kind="stable")
    return ts[order], frame["power"].to_numpy(dtype=float)[order]


def write_nwp_csv(path, cube: NwpCube) -> None:
    T, n_lat, n_lon, n_lev = cube.u.shape
    # rows ordered by timestamp, then level, lat, lon
    t, lev, lat, lon = np.meshgrid(np.arange(T), np.arange(n_lev), np.arange(n_lat), np.arange(n_lon), indexing="ij")
    t, lev, lat, lon = t.ravel(), lev.ravel(), lat.ravel(), lon.ravel()
    frame = pd.DataFrame({
        "timestamp": _format_ts(cube.timestamps)[t], "level": lev, "lat_idx": lat, "lon_idx": lon,
        "u": cube.u[t, lat, lon, lev], "v": cube.v[t, lat, lon, lev],
    })
    frame.to_csv(path, index=False, float_format="%.5f", lineterminator="\n")


def read_nwp_csv(path, source: NwpSourceSpec) -> NwpCube:
    frame = pd.read_csv(path)
    expected = ["timestamp", "level", "lat_idx", "lon_idx", "u", "v"]
    if list(frame.columns) != expected:
        raise ValueError(f"{path}: expected header {','.join(expected)}")
    ts = _parse_ts(frame["timestamp"])
    uniq, t_idx = np.unique(ts, return_inverse=True)
    lev, lat, lon = (frame[c].to_numpy(dtype=np.int64) for c in ("level", "lat_idx", "lon_idx"))
    if lat.max() >= source.lat_count or lon.max() >= source.lon_count or min(lat.min(), lon.min(), lev.min()) < 0:
        raise ValueError(f"{path}: grid indices outside the {source.name} {source.grid_shape} grid")
    n_lev = int(lev.max()) + 1
    shape = (len(uniq), source.lat_count, source.lon_count, n_lev)
    u, v = np.full(shape, np.nan), np.full(shape, np.nan)
    u[t_idx, lat, lon, lev] = frame["u"].to_numpy(dtype=float)
    v[t_idx, lat, lon, lev] = frame["v"].to_numpy(dtype=float)
    return NwpCube(source, uniq, u, v)


# ------------------------------------------------------------------- manifest
def source_file_tag(name: str) -> str:
    return name.lower()


def write_manifest(path, farms: list[dict], extra: dict | None = None) -> None:
    doc = {"version": MANIFEST_VERSION, "sources": {k: s.to_dict() for k, s in SOURCES.items()}, "farms": farms}
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {doc.get('version')}")
    return doc


def write_raw_farm(out_dir: Path, farm_id: int, timestamps, power, gfs: NwpCube, arp: NwpCube) -> dict:
    """Write the three CSVs of one farm and return its manifest entry (paths relative to ``out_dir``)."""
    out_dir = Path(out_dir)
    entry = {"farm_id": int(farm_id), "power": f"farm_{farm_id}_power.csv", "nwp": {}}
    write_power_csv(out_dir / entry["power"], timestamps, power)
    for cube in (gfs, arp):
        name = f"farm_{farm_id}_{source_file_tag(cube.source.name)}.csv"
        write_nwp_csv(out_dir / name, cube)
        entry["nwp"][cube.source.name] = name
    return entry


def read_raw_farm(root: Path, entry: dict) -> tuple[np.ndarray, np.ndarray, NwpCube, NwpCube]:
    root = Path(root)
    for rel in [entry["power"], *entry["nwp"].values()]:
        if not (root / rel).exists():
            raise FileNotFoundError(f"missing data file {root / rel}")
    ts, power = read_power_csv(root / entry["power"])
    gfs = read_nwp_csv(root / entry["nwp"]["GFS"], GFS)
    arp = read_nwp_csv(root / entry["nwp"]["ARPEGE"], ARPEGE)
    return ts, power, gfs, arp


# ---------------------------------------------------------------- preparation
@dataclass(frozen=True)
class PrepareConfig:
    month_period: float = 12.0
    max_gap: int = 3
    lookback: int = LOOKBACK
    horizon: int = HORIZON
    split: SplitSpec = SplitSpec()
    gfs_levels: int = GFS.selected_level_count
    arp_levels: int = ARPEGE.selected_level_count


def _reindex(ts: np.ndarray, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    out = np.full((len(grid),) + values.shape[1:], np.nan)
    pos = np.searchsorted(grid, ts)
    inside = (pos < len(grid)) & (grid[np.minimum(pos, len(grid) - 1)] == ts)
    out[pos[inside]] = values[inside]
    return out


def prepare_farm(farm_id: int, timestamps: np.ndarray, power: np.ndarray, gfs: NwpCube, arp: NwpCube,
                 config: PrepareConfig = PrepareConfig()) -> tuple[FarmPanel, dict]:
    """Align, gap-fill, select levels and normalise one farm.

    Every fitted statistic (power anchors, per-level speed anchors, level
    ranking) sees only hours strictly before the first test target hour.
    """
    hour = np.timedelta64(1, "h")
    first = max(timestamps[0], gfs.timestamps[0], arp.timestamps[0])
    last = min(timestamps[-1], gfs.timestamps[-1], arp.timestamps[-1])
    if last <= first:
        raise ValueError(f"farm {farm_id}: power and NWP timestamps do not overlap")
    grid = np.arange(first, last + hour, hour)

    power_h, power_ok = fill_short_gaps(_reindex(timestamps, power, grid), config.max_gap)
    gfs_h = interpolate_gfs(gfs, grid)
    arp_speed, arp_ok = fill_short_gaps(_reindex(arp.timestamps, wind_speed(arp.u, arp.v), grid), config.max_gap)
    gfs_speed = wind_speed(gfs_h.u, gfs_h.v)
    valid = power_ok & arp_ok & np.isfinite(gfs_speed).reshape(len(grid), -1).all(axis=1)

    time = cyclic_time_features(grid, config.month_period)
    probe = FarmPanel(farm_id, grid, power_h, gfs_speed, arp_speed, time, valid)
    cutoff = holdout_start(probe, config.split, config.lookback, config.horizon)
    fit_mask = valid & (grid < cutoff)
    # interpolated GFS hours after the last pre-cutoff reading borrow from the next one
    seen = gfs.timestamps[gfs.timestamps < cutoff]
    gfs_fit = fit_mask & (grid <= seen.max()) if len(seen) else fit_mask

    power_anchors = fit_minmax(power_h, fit_mask)
    gfs_levels = rank_levels(level_correlations(gfs_speed[gfs_fit], power_h[gfs_fit]), config.gfs_levels)
    arp_levels = rank_levels(level_correlations(arp_speed[fit_mask], power_h[fit_mask]), config.arp_levels)
    gfs_sel, arp_sel = gfs_speed[..., gfs_levels], arp_speed[..., arp_levels]
    gfs_anchors = fit_minmax(gfs_sel, gfs_fit, channel_axis=-1)
    arp_anchors = fit_minmax(arp_sel, fit_mask, channel_axis=-1)

    panel = FarmPanel(farm_id, grid, power_anchors.transform(power_h), gfs_anchors.transform(gfs_sel),
                      arp_anchors.transform(arp_sel), time, valid)
    info = {
        "farm_id": int(farm_id),
        "holdout_start": str(cutoff),
        "fit_last_timestamp": str(grid[fit_mask].max()),
        "power_anchors": power_anchors.to_dict(),
        "gfs_levels": [int(x) for x in gfs_levels],
        "arp_levels": [int(x) for x in arp_levels],
        "gfs_anchors": gfs_anchors.to_dict(),
        "arp_anchors": arp_anchors.to_dict(),
        "hours": int(len(grid)),
        "invalid_hours": int((~valid).sum()),
    }
    return panel, info


def save_panel(path, panel: FarmPanel) -> None:
    np.savez(path, farm_id=np.int64(panel.farm_id), timestamps=panel.timestamps.astype("int64"),
             power=panel.power, gfs=panel.gfs, arp=panel.arp, time=panel.time, valid=panel.valid)


def load_panel(path) -> FarmPanel:
    with np.load(path) as z:
        return FarmPanel(int(z["farm_id"]), z["timestamps"].astype("datetime64[h]"), z["power"], z["gfs"], z["arp"],
                         z["time"], z["valid"])


def load_prepared(directory) -> tuple[list[FarmPanel], dict]:
    """Panels (ordered by farm id) and the prepared manifest of a ``prepare`` output directory."""
    directory = Path(directory)
    path = directory / "prepared.json"
    if not path.exists():
        raise FileNotFoundError(f"no prepared dataset at {directory} (run `gustcast prepare` first)")
    doc = read_manifest(path)
    entries = sorted(doc["farms"], key=lambda e: e["farm_id"])
    return [load_panel(directory / e["panel"]) for e in entries], doc


def anchors_for(doc: dict, farm_id: int) -> MinMaxAnchors:
    """Power anchors of one farm from a prepared manifest."""
    for e in doc["farms"]:
        if e["farm_id"] == farm_id:
            return MinMaxAnchors.from_dict(e["power_anchors"])
    raise KeyError(f"farm {farm_id} not in manifest")
