"""Synthetic multi-farm wind data with GFS-like and ARPEGE-like NWP cubes.

Each farm sees a wind vector built from a seasonal and diurnal mean flow plus
red noise, where a share of the noise is common to all farms (same seed, any
farm) so that farms are correlated. The field is spread over a lat/lon grid
with a drifting spatial pattern and over height with a power-law profile;
levels far from hub height mix in extra independent noise so that level
selection has something to find. The NWP cubes are the true field plus
source-specific forecast error, and GFS is reported only every third hour.
Power is a saturating cubic curve of the hub-level spatial-mean true speed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .features import PowerSeries
from .nwp import ARPEGE, GFS, NwpCube, NwpSourceSpec

HUB_HEIGHT = 100.0


@dataclass(frozen=True)
class SyntheticConfig:
    start: str = "2020-01-01T00"
    mean_wind: float = 6.0  # m/s at hub height
    gust_scale: float = 0.55  # red-noise std as a fraction of mean_wind
    correlation_hours: float = 30.0
    shared_weight: float = 0.6  # variance share of the cross-farm weather component
    seasonal_amplitude: float = 0.25  # relative; peak mid-January, trough mid-July
    diurnal_amplitude: float = 0.15  # relative; peak 02 UTC, trough 14 UTC
    shear_exponent: float = 0.14
    level_decorrelation: float = 0.45
    spatial_amplitude: float = 0.06
    nwp_noise: dict = field(default_factory=lambda: {"GFS": 0.9, "ARPEGE": 0.6})  # m/s per component
    power_noise: float = 0.03  # fraction of capacity
    cut_in: float = 3.0
    rated: float = 13.0
    gfs: NwpSourceSpec = GFS
    arpege: NwpSourceSpec = ARPEGE

    def noiseless(self) -> "SyntheticConfig":
        return replace(self, nwp_noise={"GFS": 0.0, "ARPEGE": 0.0}, power_noise=0.0)


def level_heights(count: int, top: float = 3000.0) -> np.ndarray:
    """Log-spaced heights from 10 m to ``top``, with hub height always included."""
    heights = np.geomspace(10.0, top, count)
    heights[np.argmin(np.abs(heights - HUB_HEIGHT))] = HUB_HEIGHT
    return heights


def hub_level(spec: NwpSourceSpec) -> int:
    return int(np.flatnonzero(level_heights(spec.raw_level_count) == HUB_HEIGHT)[0])


def capacity_mw(farm_id: int) -> float:
    return 30.0 + 12.0 * farm_id


def power_curve(speed: np.ndarray, cut_in: float = 3.0, rated: float = 13.0) -> np.ndarray:
    """Fraction of capacity: 0 below cut-in, cubic in between, 1 from rated speed on."""
    s = np.asarray(speed, dtype=float)
    frac = (s ** 3 - cut_in ** 3) / (rated ** 3 - cut_in ** 3)
    return np.clip(frac, 0.0, 1.0)


def _red_noise(rng: np.random.Generator, shape, tau: float) -> np.ndarray:
    """Unit-variance AR(1) noise along axis 0 with e-folding time ``tau`` steps."""
    phi = np.exp(-1.0 / tau)
    white = rng.standard_normal(shape)
    white[0] /= np.sqrt(1.0 - phi * phi)  # start in the stationary distribution
    return lfilter([np.sqrt(1.0 - phi * phi)], [1.0, -phi], white, axis=0)


def _cell_positions(spec: NwpSourceSpec) -> tuple[np.ndarray, np.ndarray]:
    y, x = np.meshgrid(np.linspace(-1, 1, spec.lat_count), np.linspace(-1, 1, spec.lon_count), indexing="ij")
    return y, x


def _field(spec: NwpSourceSpec, speed_ref: np.ndarray, direction: np.ndarray, hours: np.ndarray,
           level_noise: np.ndarray, cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """True u, v on the source's grid and levels, shape [T, lat, lon, level]."""
    heights = level_heights(spec.raw_level_count)
    profile = (heights / HUB_HEIGHT) ** cfg.shear_exponent
    # levels far from the hub carry more independent variation
    distance = np.minimum(1.0, np.abs(np.log(heights / HUB_HEIGHT)) / np.log(30.0))
    level_factor = profile * (1.0 + cfg.level_decorrelation * distance * level_noise[:, :spec.raw_level_count])
    y, x = _cell_positions(spec)
    phase = 2 * np.pi * hours / 36.0
    pattern = 1.0 + cfg.spatial_amplitude * np.sin(1.3 * x[None] + 0.7 * y[None] - phase[:, None, None])
    speed = np.maximum(speed_ref[:, None, None, None] * pattern[..., None] * level_factor[:, None, None, :], 0.0)
    veer = np.deg2rad(8.0) * np.log(heights / 10.0) / np.log(300.0)
    theta = direction[:, None, None, None] + veer[None, None, None, :]
    return speed * np.cos(theta), speed * np.sin(theta)


def generate_synthetic_farm(seed: int, days: int, farm_id: int, config: SyntheticConfig | None = None
                            ) -> tuple[PowerSeries, NwpCube, NwpCube]:
    """Hourly power plus a 3-hourly GFS cube and an hourly ARPEGE cube for one farm."""
    if days < 10:
        raise ValueError("days must be >= 10")
    cfg = config or SyntheticConfig()
    T = days * 24
    start = np.datetime64(cfg.start, "h")
    timestamps = start + np.arange(T).astype("timedelta64[h]")
    hours = np.arange(T, dtype=float)
    hod = (timestamps - timestamps.astype("datetime64[D]")).astype(int)
    doy = (timestamps.astype("datetime64[D]") - timestamps.astype("datetime64[Y]")).astype(int)

    shared_rng = np.random.default_rng([seed, 10_007])
    own_rng = np.random.default_rng([seed, farm_id])
    tau = cfg.correlation_hours
    w = cfg.shared_weight
    gusts = np.sqrt(w) * _red_noise(shared_rng, (T, 2), tau) + np.sqrt(1 - w) * _red_noise(own_rng, (T, 2), tau)

    seasonal = 1.0 + cfg.seasonal_amplitude * np.cos(2 * np.pi * (doy - 15) / 365.25)
    diurnal = 1.0 + cfg.diurnal_amplitude * np.cos(2 * np.pi * (hod - 2) / 24.0)
    mean_flow = cfg.mean_wind * (0.9 + 0.05 * farm_id / 6.0) * seasonal * diurnal
    sigma = cfg.gust_scale * cfg.mean_wind
    u_ref = mean_flow + sigma * gusts[:, 0]
    v_ref = sigma * gusts[:, 1]
    speed_ref = np.hypot(u_ref, v_ref)
    direction = np.arctan2(v_ref, u_ref) + own_rng.uniform(-np.pi, np.pi)

    n_levels = max(cfg.gfs.raw_level_count, cfg.arpege.raw_level_count)
    level_noise = _red_noise(own_rng, (T, n_levels), tau / 2)

    cubes = {}
    for spec in (cfg.gfs, cfg.arpege):
        u, v = _field(spec, speed_ref, direction, hours, level_noise, cfg)
        noise = cfg.nwp_noise.get(spec.name, 0.0)
        if noise > 0:
            err_rng = np.random.default_rng([seed, farm_id, 1 if spec.name == "GFS" else 2])
            u = u + noise * _red_noise(err_rng, u.shape, 6.0)
            v = v + noise * _red_noise(err_rng, v.shape, 6.0)
        keep = (timestamps.astype("int64") % spec.cadence_hours) == 0
        cubes[spec.name] = NwpCube(spec, timestamps[keep], u[keep], v[keep])

    true_u, true_v = _field(cfg.arpege, speed_ref, direction, hours, level_noise, cfg)
    hub = hub_level(cfg.arpege)
    hub_speed = np.hypot(true_u[..., hub], true_v[..., hub]).mean(axis=(1, 2))
    frac = power_curve(hub_speed, cfg.cut_in, cfg.rated)
    if cfg.power_noise > 0:
        p_rng = np.random.default_rng([seed, farm_id, 3])
        frac = np.clip(frac + cfg.power_noise * _red_noise(p_rng, T, 3.0), 0.0, 1.0)
    power = PowerSeries(farm_id, timestamps, capacity_mw(farm_id) * frac)
    return power, cubes[cfg.gfs.name], cubes[cfg.arpege.name]
