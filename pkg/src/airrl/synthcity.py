"""Deterministic synthetic cities with a wind-driven pollution field.

The field at a point is the sum of

* a constant background,
* a regional inflow advected across the city with the wind: the upwind
  edge carries one independent series per crosswind node, and the
  reading at a point equals what entered the edge at its crosswind
  position some hours earlier,
* displaced-Gaussian plumes of the point sources, with each source's
  emission lagged by the travel time to the point,
* a small traffic term proportional to nearby road length.

Station readings add multiplicative measurement noise; probe points
(``truth_*.csv``) are the noise-free field.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .evaluation import concentration_to_iaqi

SCHEMA_VERSION = "airrl-city/1"
POLLUTANTS = ("pm25", "pm10")
WIND_REGIMES = ("calm", "windy", "mixed")
N_POI_CATEGORIES = 12
N_ROAD_CATEGORIES = 4
N_WEATHER_CATEGORIES = 17
N_WIND_DIR_CATEGORIES = 10
WIND_CALM = 8
WIND_VARIABLE = 9
DISTRICT_GRID = 3
FACTORY = 0
ROAD_NAMES = ("highway", "trunk", "railway", "other")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class CityConfig:
    width_km: float = 30.0
    height_km: float = 30.0
    n_stations: int = 30
    n_hours: int = 2160
    n_sources: int = 8
    wind_regime: str = "windy"
    n_poi_per_category: int = 40
    seed: int = 0
    pollutant: str = "pm25"
    # simulator constants
    plume_shift: float = 0.5        # km of plume displacement per m/s of wind
    plume_sigma: float = 4.0        # km
    transport_speed: float = 0.6    # km/h of advection per m/s of wind
    background: float = 10.0
    regional_level: float = 60.0
    regional_nodes: int = 6         # independent inflow series across the upwind edge
    regional_phi: float = 0.6       # hourly AR(1) persistence of the inflow
    source_strength: tuple[float, float] = (8.0, 24.0)
    traffic_coef: float = 2.0
    noise: float = 0.05
    prevailing_wind_deg: float | None = None
    wind_spread_deg: float = 30.0
    block_hours: int = 6
    n_probes: int = 10
    missing_rate: float = 0.0

    def __post_init__(self):
        validate_config(self)


def validate_config(cfg: CityConfig) -> None:
    if not (cfg.width_km > 0):
        raise ConfigError("width_km", "must be > 0")
    if not (cfg.height_km > 0):
        raise ConfigError("height_km", "must be > 0")
    if int(cfg.n_stations) != cfg.n_stations or cfg.n_stations < 2:
        raise ConfigError("n_stations", "must be an integer >= 2")
    if int(cfg.n_hours) != cfg.n_hours or cfg.n_hours < 48:
        raise ConfigError("n_hours", "must be an integer >= 48")
    if cfg.n_sources < 0:
        raise ConfigError("n_sources", "must be >= 0")
    if cfg.wind_regime not in WIND_REGIMES:
        raise ConfigError("wind_regime", f"must be one of {WIND_REGIMES}")
    if cfg.n_poi_per_category < 0:
        raise ConfigError("n_poi_per_category", "must be >= 0")
    if cfg.pollutant not in POLLUTANTS:
        raise ConfigError("pollutant", f"must be one of {POLLUTANTS}")
    if not (0 <= cfg.seed < 2**64):
        raise ConfigError("seed", "must fit in 64 bits")
    if cfg.plume_sigma <= 0:
        raise ConfigError("plume_sigma", "must be > 0")
    if cfg.block_hours < 1:
        raise ConfigError("block_hours", "must be >= 1")
    if not (0 <= cfg.missing_rate < 1):
        raise ConfigError("missing_rate", "must be in [0, 1)")
    if int(cfg.regional_nodes) != cfg.regional_nodes or cfg.regional_nodes < 2:
        raise ConfigError("regional_nodes", "must be an integer >= 2")
    if not (0 <= cfg.regional_phi < 1):
        raise ConfigError("regional_phi", "must be in [0, 1)")
    lo, hi = cfg.source_strength
    if not (0 < lo <= hi):
        raise ConfigError("source_strength", "need 0 < low <= high")


@dataclass(frozen=True)
class PollutionSource:
    x_km: float
    y_km: float
    emission_rate: float

    def __post_init__(self):
        if not self.emission_rate > 0:
            raise ValueError("emission_rate must be > 0")


@dataclass(frozen=True)
class WindState:
    speed: float
    direction: float                # radians, direction the wind blows FROM
    weather_cat: int = 0
    temperature: float = 15.0
    humidity: float = 50.0
    pressure: float = 1013.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("wind speed must be >= 0")
        if not (0 <= self.direction < 2 * math.pi):
            raise ValueError("wind direction must be in [0, 2*pi)")
        if not (0 <= self.weather_cat < N_WEATHER_CATEGORIES):
            raise ValueError("weather category out of range")

    @property
    def downwind(self) -> np.ndarray:
        return downwind_unit(self.direction)


def downwind_unit(direction_rad) -> np.ndarray:
    """Unit vector(s) the wind blows towards (x east, y north)."""
    d = np.asarray(direction_rad, dtype=float)
    return np.stack([-np.sin(d), -np.cos(d)], axis=-1)


def plume_concentration(sources, wind: WindState, point, background: float,
                        shift: float = 0.5, sigma: float = 4.0) -> float:
    """Background plus displaced Gaussian kernels of every source.

    Each kernel is centered ``shift * wind.speed`` km downwind of its source.
    """
    p = np.asarray(point, dtype=float)
    total = float(background)
    if not sources:
        return total
    xy = np.array([[s.x_km, s.y_km] for s in sources])
    q = np.array([s.emission_rate for s in sources])
    centers = xy + shift * wind.speed * wind.downwind
    d2 = np.sum((p - centers) ** 2, axis=1)
    return total + float(np.sum(q * np.exp(-d2 / (2 * sigma**2))))


@dataclass
class Road:
    road_id: int
    category: int
    vertices: np.ndarray            # (m, 2) km

    def __eq__(self, other):
        return (isinstance(other, Road) and self.road_id == other.road_id
                and self.category == other.category
                and np.array_equal(self.vertices, other.vertices))


@dataclass
class FieldDrivers:
    """Everything needed to re-evaluate one pollutant's field anywhere."""
    sources: list[PollutionSource]
    emission: np.ndarray            # (n_sources, n_hours) multiplier per hour
    regional: np.ndarray            # (n_nodes, n_hours + pad) inflow, column 0 = hour -pad
    pad: int

    def __eq__(self, other):
        return (isinstance(other, FieldDrivers) and self.sources == other.sources
                and self.pad == other.pad
                and np.array_equal(self.emission, other.emission)
                and np.array_equal(self.regional, other.regional))


@dataclass
class CityDataset:
    config: CityConfig
    stations: np.ndarray            # (S, 2)
    poi_xy: np.ndarray              # (P, 2)
    poi_cat: np.ndarray             # (P,)
    roads: list[Road]
    weather: dict[str, np.ndarray]  # each (9, H)
    aqi: dict[str, np.ndarray]      # pollutant -> (S, H), NaN = missing
    probes: np.ndarray              # (Q, 2)
    truth: dict[str, np.ndarray]    # pollutant -> (Q, H)
    drivers: dict[str, FieldDrivers] = field(default_factory=dict)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_hours(self) -> int:
        return self.config.n_hours

    def district_of(self, xy) -> np.ndarray | int:
        xy = np.asarray(xy, dtype=float)
        col = np.clip((xy[..., 0] / self.config.width_km * DISTRICT_GRID).astype(int),
                      0, DISTRICT_GRID - 1)
        row = np.clip((xy[..., 1] / self.config.height_km * DISTRICT_GRID).astype(int),
                      0, DISTRICT_GRID - 1)
        d = row * DISTRICT_GRID + col
        return int(d) if d.ndim == 0 else d

    def wind_at(self, district: int, t: int) -> WindState:
        w = self.weather
        direction = math.radians(float(w["wind_dir_deg"][district, t])) % (2 * math.pi)
        return WindState(float(w["wind_speed"][district, t]), direction,
                         int(w["weather_cat"][district, t]),
                         float(w["temp"][district, t]),
                         float(w["humidity"][district, t]),
                         float(w["pressure"][district, t]))

    def concentration(self, pollutant: str, points, t: int) -> np.ndarray:
        """Noise-free concentration at ``points`` (P, 2) for hour ``t``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        hours = np.array([t])
        return _field(self.config, self.drivers[pollutant], self.roads,
                      self.weather, pts, hours)[0]

    def __eq__(self, other):
        if not isinstance(other, CityDataset):
            return NotImplemented
        return (self.config == other.config
                and np.array_equal(self.stations, other.stations)
                and np.array_equal(self.poi_xy, other.poi_xy)
                and np.array_equal(self.poi_cat, other.poi_cat)
                and self.roads == other.roads
                and _dict_arrays_equal(self.weather, other.weather)
                and _dict_arrays_equal(self.aqi, other.aqi)
                and np.array_equal(self.probes, other.probes)
                and _dict_arrays_equal(self.truth, other.truth)
                and self.drivers == other.drivers)


def _dict_arrays_equal(a, b) -> bool:
    return a.keys() == b.keys() and all(
        np.array_equal(a[k], b[k], equal_nan=True) for k in a)


def wind_direction_category(speed, direction_deg) -> np.ndarray:
    """8 compass sectors (0 = N, clockwise), 8 = calm, 9 = variable."""
    speed = np.asarray(speed, dtype=float)
    sector = np.floor(((np.asarray(direction_deg) + 22.5) % 360.0) / 45.0).astype(int) % 8
    cat = np.where(speed < 0.5, WIND_CALM, np.where(speed < 1.0, WIND_VARIABLE, sector))
    return cat.astype(int)


# ---------------------------------------------------------------- generation

def _wind_blocks(cfg: CityConfig, rng: np.random.Generator):
    n_blocks = -(-cfg.n_hours // cfg.block_hours)
    prevailing = (rng.uniform(0, 360) if cfg.prevailing_wind_deg is None
                  else cfg.prevailing_wind_deg)
    speed = np.empty(n_blocks)
    direction = np.empty(n_blocks)
    for b in range(n_blocks):
        if cfg.wind_regime == "calm":
            windy = False
        elif cfg.wind_regime == "windy":
            windy = True
        else:
            windy = b % 2 == 1
        if windy:
            speed[b] = rng.uniform(4.0, 8.0)
            direction[b] = (prevailing + rng.normal(0.0, cfg.wind_spread_deg)) % 360.0
        else:
            speed[b] = rng.uniform(0.0, 1.0)
            direction[b] = rng.uniform(0.0, 360.0)
    hours = np.arange(cfg.n_hours) // cfg.block_hours
    return speed[hours], direction[hours]


def _weather(cfg: CityConfig, rng: np.random.Generator, speed, direction):
    H = cfg.n_hours
    nd = DISTRICT_GRID**2
    t = np.arange(H)
    diurnal = np.sin(2 * np.pi * (t - 9) / 24.0)
    temp = np.empty((nd, H))
    hum = np.empty((nd, H))
    pres = np.empty((nd, H))
    ws = np.empty((nd, H))
    wd = np.empty((nd, H))
    wcat = np.empty((nd, H), dtype=int)
    city_p = 1013.0 + np.cumsum(rng.normal(0, 0.3, H))
    city_p -= np.linspace(0, city_p[-1] - 1013.0, H)
    for d in range(nd):
        temp[d] = 15 + 8 * diurnal + rng.normal(0, 1.0) + rng.normal(0, 0.5, H)
        h = np.empty(H)
        h[0] = 50.0
        eps = rng.normal(0, 2.0, H)
        for i in range(1, H):
            h[i] = 50.0 + 0.95 * (h[i - 1] - 50.0) + eps[i]
        hum[d] = np.clip(h - 10 * diurnal, 5, 100)
        pres[d] = city_p + rng.normal(0, 0.2, H)
        ws[d] = np.maximum(speed + rng.normal(0, 0.1, H), 0.0)
        wd[d] = (direction + rng.normal(0, 3.0, H)) % 360.0
        c = np.empty(H, dtype=int)
        c[0] = rng.integers(N_WEATHER_CATEGORIES)
        stay = rng.random(H) < 0.95
        jumps = rng.integers(N_WEATHER_CATEGORIES, size=H)
        for i in range(1, H):
            c[i] = c[i - 1] if stay[i] else jumps[i]
        wcat[d] = c
    return {
        "temp": np.round(temp, 3),
        "humidity": np.round(hum, 3),
        "pressure": np.round(pres, 3),
        "wind_speed": np.round(ws, 3),
        "wind_dir_deg": np.round(wd, 3) % 360.0,
        "wind_dir_cat": wind_direction_category(np.round(ws, 3), np.round(wd, 3) % 360.0),
        "weather_cat": wcat,
    }


def _roads(cfg: CityConfig, rng: np.random.Generator) -> list[Road]:
    counts = (2, 4, 1, 12)
    seg_km = (2.0, 1.5, 2.5, 0.6)
    n_seg = (20, 12, 16, 6)
    roads = []
    for cat in range(N_ROAD_CATEGORIES):
        for _ in range(counts[cat]):
            pts = [rng.uniform([0, 0], [cfg.width_km, cfg.height_km])]
            heading = rng.uniform(0, 2 * np.pi)
            for _ in range(n_seg[cat]):
                heading += rng.normal(0, 0.25)
                nxt = pts[-1] + seg_km[cat] * np.array([np.cos(heading), np.sin(heading)])
                if not (0 <= nxt[0] <= cfg.width_km and 0 <= nxt[1] <= cfg.height_km):
                    break
                pts.append(nxt)
            if len(pts) >= 2:
                roads.append(Road(len(roads), cat, np.round(np.array(pts), 4)))
    return roads


def _ar1_log(rng, n, phi, sigma):
    x = np.empty(n)
    x[0] = rng.normal(0, sigma / math.sqrt(1 - phi**2))
    eps = rng.normal(0, sigma, n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i]
    return np.exp(x - sigma**2 / (2 * (1 - phi**2)))


def road_length_near(roads: list[Road], points: np.ndarray, radius: float) -> np.ndarray:
    """Total road length (all categories) within ``radius`` of each point."""
    from .features import clipped_length
    out = np.zeros(len(points))
    for r in roads:
        for a, b in zip(r.vertices[:-1], r.vertices[1:]):
            out += clipped_length(a, b, points, radius)
    return out


def _field(cfg: CityConfig, drv: FieldDrivers, roads, weather, points, hours):
    """Concentration (len(hours), P) at ``points`` using city-mean wind.

    A city without sources is pollution-free: the regional inflow and the
    traffic term are switched off along with the plumes.
    """
    if not drv.sources:
        return np.full((len(hours), len(points)), float(cfg.background))
    speed = weather["wind_speed"].mean(axis=0)[hours]
    u = downwind_unit(np.radians(_circmean_deg(weather["wind_dir_deg"])[hours]))
    v = cfg.transport_speed * speed                                 # km/h
    advecting = speed >= 1.0
    # regional inflow, lagged by travel time from the upwind edge
    corners = np.array([[0, 0], [cfg.width_km, 0], [0, cfg.height_km],
                        [cfg.width_km, cfg.height_km]])
    along = points @ u.T                                            # (P, n)
    edge = (corners @ u.T).min(axis=0)                              # (n,)
    lag = np.where(advecting, (along - edge) / np.where(advecting, v, 1.0), 0.0)
    tq = (hours[None, :] - lag + drv.pad).T                         # (n, P) fractional hour
    perp = np.column_stack([-u[:, 1], u[:, 0]])
    cross = points @ perp.T                                          # (P, n)
    c_lo, c_hi = (corners @ perp.T).min(axis=0), (corners @ perp.T).max(axis=0)
    node = ((cross - c_lo) / (c_hi - c_lo) * (len(drv.regional) - 1)).T
    conc = cfg.background + cfg.regional_level * _bilinear(drv.regional, node, tq)
    xy = np.array([[s.x_km, s.y_km] for s in drv.sources])
    q = np.array([s.emission_rate for s in drv.sources])
    shift = cfg.plume_shift * speed[:, None] * u                    # (n, 2)
    centers = xy[None, :, :] + shift[:, None, :]                    # (n, J, 2)
    d2 = ((points[None, :, None, :] - centers[:, None, :, :]) ** 2).sum(-1)
    kern = np.exp(-d2 / (2 * cfg.plume_sigma**2))                   # (n, P, J)
    rel = points[:, None, :] - xy[None, :, :]                       # (P, J, 2)
    along_s = np.einsum("pjk,nk->npj", rel, u)
    vsafe = np.where(advecting, v, 1.0)[:, None, None]
    src_lag = np.where(advecting[:, None, None], np.maximum(along_s, 0.0) / vsafe, 0.0)
    te = np.clip(hours[:, None, None] - src_lag, 0, drv.emission.shape[1] - 1)
    lo = np.floor(te).astype(int)
    hi = np.minimum(lo + 1, drv.emission.shape[1] - 1)
    frac = te - lo
    j = np.arange(len(q))[None, None, :]
    em = drv.emission[j, lo] * (1 - frac) + drv.emission[j, hi] * frac
    conc = conc + np.sum(q * em * kern, axis=-1)
    if cfg.traffic_coef:
        near = road_length_near(roads, points, 1.0)
        rush = 1.0 + 0.5 * np.cos(2 * np.pi * (hours - 8) / 24.0) ** 2
        conc = conc + cfg.traffic_coef * rush[:, None] * near[None, :]
    return conc


def _bilinear(grid: np.ndarray, row: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Linear interpolation of a 2-D ``grid`` at fractional (row, col), clamped to its edges."""
    r = np.clip(row, 0, grid.shape[0] - 1)
    c = np.clip(col, 0, grid.shape[1] - 1)
    r0 = np.minimum(np.floor(r).astype(int), grid.shape[0] - 2)
    c0 = np.minimum(np.floor(c).astype(int), grid.shape[1] - 2)
    fr, fc = r - r0, c - c0
    top = grid[r0, c0] * (1 - fc) + grid[r0, c0 + 1] * fc
    bot = grid[r0 + 1, c0] * (1 - fc) + grid[r0 + 1, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


def _circmean_deg(deg: np.ndarray) -> np.ndarray:
    r = np.radians(deg)
    return np.degrees(np.arctan2(np.sin(r).mean(axis=0), np.cos(r).mean(axis=0))) % 360.0


def generate_city(config: CityConfig) -> CityDataset:
    cfg = config
    validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    W, H_km = cfg.width_km, cfg.height_km
    margin = min(1.0, W / 10, H_km / 10)
    stations = np.round(rng.uniform([margin, margin], [W - margin, H_km - margin],
                                    size=(cfg.n_stations, 2)), 4)
    probes = np.round(rng.uniform([margin, margin], [W - margin, H_km - margin],
                                  size=(cfg.n_probes, 2)), 4)

    drivers: dict[str, FieldDrivers] = {}
    pad = 200
    reg_sd = 0.25 * math.sqrt((1 - cfg.regional_phi**2) / (1 - 0.9**2))   # fixed stationary spread
    for pol in POLLUTANTS:
        srcs = []
        for _ in range(cfg.n_sources):
            xy = rng.uniform([0, 0], [W, H_km])
            srcs.append(PollutionSource(round(float(xy[0]), 4), round(float(xy[1]), 4),
                                        round(float(rng.uniform(*cfg.source_strength)), 4)))
        emission = np.round(np.array([_ar1_log(rng, cfg.n_hours, 0.8, 0.3)
                                      for _ in srcs]).reshape(len(srcs), cfg.n_hours), 6)
        regional = np.round(np.array([_ar1_log(rng, cfg.n_hours + pad, cfg.regional_phi, reg_sd)
                                      for _ in range(cfg.regional_nodes)]), 6)
        if pol == "pm10":
            regional = np.round(regional * 1.4, 6)
        drivers[pol] = FieldDrivers(srcs, emission, regional, pad)

    all_src = [s for pol in POLLUTANTS for s in drivers[pol].sources]
    poi_xy, poi_cat = [], []
    for cat in range(N_POI_CATEGORIES):
        for _ in range(cfg.n_poi_per_category):
            if cat == FACTORY and all_src and rng.random() < 0.8:
                s = all_src[rng.integers(len(all_src))]
                xy = np.array([s.x_km, s.y_km]) + rng.normal(0, 1.5, 2)
                xy = np.clip(xy, 0, [W, H_km])
            else:
                xy = rng.uniform([0, 0], [W, H_km])
            poi_xy.append(xy)
            poi_cat.append(cat)
    poi_xy = np.round(np.array(poi_xy).reshape(-1, 2), 4)
    poi_cat = np.array(poi_cat, dtype=int)

    roads = _roads(cfg, rng)
    speed, direction = _wind_blocks(cfg, rng)
    weather = _weather(cfg, rng, speed, direction)

    hours = np.arange(cfg.n_hours)
    aqi, truth = {}, {}
    for pol in POLLUTANTS:
        conc = _field(cfg, drivers[pol], roads, weather, stations, hours).T    # (S, H)
        # instrument noise acts on the above-background signal only
        noisy = cfg.background + (conc - cfg.background) * np.exp(
            rng.normal(0, cfg.noise, conc.shape))
        vals = np.round(concentration_to_iaqi(noisy, pol), 3)
        if cfg.missing_rate > 0:
            vals[rng.random(vals.shape) < cfg.missing_rate] = np.nan
        aqi[pol] = vals
        pconc = _field(cfg, drivers[pol], roads, weather, probes, hours).T
        truth[pol] = np.round(concentration_to_iaqi(pconc, pol), 3)

    return CityDataset(cfg, stations, poi_xy, poi_cat, roads, weather, aqi,
                       probes, truth, drivers)


# ---------------------------------------------------------------- file I/O

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def emit_dataset(city: CityDataset, dir) -> Path:
    """Write the dataset directory; raises OSError naming the path."""
    out = Path(dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"directory not writable: {out}")
        cfg = asdict(city.config)
        meta = {
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "n_probes": len(city.probes),
            "field": {
                pol: {
                    "sources": [asdict(s) for s in d.sources],
                    "pad": d.pad,
                    "emission": d.emission.tolist(),
                    "regional": d.regional.tolist(),
                }
                for pol, d in city.drivers.items()
            },
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
        _write_csv(out / "stations.csv", ["id", "x_km", "y_km"],
                   ((i, x, y) for i, (x, y) in enumerate(city.stations)))
        _write_csv(out / "poi.csv", ["x_km", "y_km", "category"],
                   ((x, y, c) for (x, y), c in zip(city.poi_xy, city.poi_cat)))
        _write_csv(out / "roads.csv", ["road_id", "category", "x_km", "y_km"],
                   ((r.road_id, r.category, x, y) for r in city.roads for x, y in r.vertices))
        w = city.weather
        nd, nh = w["temp"].shape
        _write_csv(out / "weather.csv",
                   ["district", "t", "temp", "humidity", "pressure", "wind_speed",
                    "wind_dir_cat", "wind_dir_deg", "weather_cat"],
                   ((d, t, w["temp"][d, t], w["humidity"][d, t], w["pressure"][d, t],
                     w["wind_speed"][d, t], int(w["wind_dir_cat"][d, t]),
                     w["wind_dir_deg"][d, t], int(w["weather_cat"][d, t]))
                    for d in range(nd) for t in range(nh)))
        for pol in POLLUTANTS:
            a = city.aqi[pol]
            _write_csv(out / f"aqi_{pol}.csv", ["station_id", "t", "iaqi"],
                       ((s, t, a[s, t]) for s in range(a.shape[0]) for t in range(a.shape[1])))
            tr = city.truth[pol]
            _write_csv(out / f"truth_{pol}.csv", ["x_km", "y_km", "t", "iaqi"],
                       ((city.probes[q, 0], city.probes[q, 1], t, tr[q, t])
                        for q in range(tr.shape[0]) for t in range(tr.shape[1])))
    except OSError as exc:
        if str(out) in str(exc):
            raise
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    return out


def _read_csv(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _num(s: str) -> float:
    return float("nan") if s == "" else float(s)


def load_dataset(dir) -> CityDataset:
    src = Path(dir)
    try:
        meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read dataset metadata in {src}: {exc}") from exc
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{src}: unsupported schema {meta.get('schema_version')!r}")
    raw = meta["config"]
    raw["source_strength"] = tuple(raw["source_strength"])
    names = {f.name for f in fields(CityConfig)}
    cfg = CityConfig(**{k: v for k, v in raw.items() if k in names})

    _, rows = _read_csv(src / "stations.csv")
    stations = np.array([[float(r[1]), float(r[2])] for r in rows]).reshape(-1, 2)
    _, rows = _read_csv(src / "poi.csv")
    poi_xy = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
    poi_cat = np.array([int(r[2]) for r in rows], dtype=int)
    _, rows = _read_csv(src / "roads.csv")
    roads: list[Road] = []
    verts: dict[int, list] = {}
    cats: dict[int, int] = {}
    for r in rows:
        rid = int(r[0])
        cats[rid] = int(r[1])
        verts.setdefault(rid, []).append([float(r[2]), float(r[3])])
    for rid in verts:
        roads.append(Road(rid, cats[rid], np.array(verts[rid])))

    _, rows = _read_csv(src / "weather.csv")
    nd = DISTRICT_GRID**2
    H = cfg.n_hours
    weather = {k: np.zeros((nd, H)) for k in
               ("temp", "humidity", "pressure", "wind_speed", "wind_dir_deg")}
    weather["wind_dir_cat"] = np.zeros((nd, H), dtype=int)
    weather["weather_cat"] = np.zeros((nd, H), dtype=int)
    for r in rows:
        d, t = int(r[0]), int(r[1])
        weather["temp"][d, t] = float(r[2])
        weather["humidity"][d, t] = float(r[3])
        weather["pressure"][d, t] = float(r[4])
        weather["wind_speed"][d, t] = float(r[5])
        weather["wind_dir_cat"][d, t] = int(r[6])
        weather["wind_dir_deg"][d, t] = float(r[7])
        weather["weather_cat"][d, t] = int(r[8])

    aqi, truth = {}, {}
    q = int(meta["n_probes"])
    probes = np.zeros((q, 2))
    for pol in POLLUTANTS:
        _, rows = _read_csv(src / f"aqi_{pol}.csv")
        a = np.full((len(stations), H), np.nan)
        for r in rows:
            a[int(r[0]), int(r[1])] = _num(r[2])
        aqi[pol] = a
        _, rows = _read_csv(src / f"truth_{pol}.csv")
        tr = np.zeros((q, H))
        for i, r in enumerate(rows):
            k, t = divmod(i, H)
            probes[k] = (float(r[0]), float(r[1]))
            tr[k, int(r[2])] = float(r[3])
        truth[pol] = tr

    drivers = {}
    for pol, f in meta.get("field", {}).items():
        srcs = [PollutionSource(**s) for s in f["sources"]]
        emission = np.array(f["emission"], dtype=float).reshape(len(srcs), -1) \
            if srcs else np.zeros((0, H))
        drivers[pol] = FieldDrivers(srcs, emission, np.array(f["regional"], dtype=float).reshape(
            cfg.regional_nodes, -1),
                                    int(f["pad"]))
    return CityDataset(cfg, stations, poi_xy, poi_cat, roads, weather, aqi, probes,
                       truth, drivers)
