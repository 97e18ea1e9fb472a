"""Feature blocks for targets and candidate stations.

Block widths::

    target spatial   52 = POI 48 (4 directions x 12 categories) + roads 4
    target temporal  T x 31 = weather 17 + wind direction 10 + numeric 4
    station spatial  61 = POI 48 + roads 4 + geo 9 (distance 1 + bearing 8)
    station temporal T x 32 = meteorology 31 + IAQI 1
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .synthcity import (N_POI_CATEGORIES, N_ROAD_CATEGORIES, N_WEATHER_CATEGORIES,
                        N_WIND_DIR_CATEGORIES, CityDataset, Road)

RADIUS_KM = 2.0
N_POI_DIRECTIONS = 4
N_GEO_SECTORS = 8
POI_DIM = N_POI_DIRECTIONS * N_POI_CATEGORIES          # 48
ROAD_DIM = N_ROAD_CATEGORIES                           # 4
METEO_NUMERIC = ("temp", "humidity", "pressure", "wind_speed")
METEO_DIM = N_WEATHER_CATEGORIES + N_WIND_DIR_CATEGORIES + len(METEO_NUMERIC)   # 31
GEO_DIM = 1 + N_GEO_SECTORS                            # 9
TARGET_SPATIAL_DIM = POI_DIM + ROAD_DIM                # 52
STATION_SPATIAL_DIM = POI_DIM + ROAD_DIM + GEO_DIM     # 61
TARGET_TEMPORAL_DIM = METEO_DIM                        # 31
STATION_TEMPORAL_DIM = METEO_DIM + 1                   # 32
SIGMA_FLOOR = 1e-8


# ------------------------------------------------------------------ geometry

def bearing_deg(origin, point) -> np.ndarray | float:
    """Compass bearing of ``point`` seen from ``origin``, clockwise from north."""
    d = np.asarray(point, dtype=float) - np.asarray(origin, dtype=float)
    b = np.degrees(np.arctan2(d[..., 0], d[..., 1])) % 360.0
    return float(b) if np.ndim(b) == 0 else b


def quadrant(bearing) -> np.ndarray:
    """0 = N [315, 45), 1 = E, 2 = S, 3 = W."""
    return (np.floor(((np.asarray(bearing) + 45.0) % 360.0) / 90.0).astype(int)) % 4


def sector8(bearing) -> np.ndarray:
    """Eight 45-degree sectors, sector 0 centered on north, clockwise."""
    return (np.floor(((np.asarray(bearing) + 22.5) % 360.0) / 45.0).astype(int)) % 8


def clipped_length(a, b, centers, radius: float) -> np.ndarray:
    """Length of segment ``a``-``b`` inside the disk of ``radius`` around each center."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    seg = float(np.hypot(*d))
    if seg == 0.0:
        return np.zeros(len(c))
    f = a - c                                      # (P, 2)
    A = seg * seg
    B = 2.0 * f @ d
    C = np.sum(f * f, axis=1) - radius * radius
    disc = B * B - 4 * A * C
    ok = disc > 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    s0 = np.clip((-B - root) / (2 * A), 0.0, 1.0)
    s1 = np.clip((-B + root) / (2 * A), 0.0, 1.0)
    return np.where(ok, (s1 - s0) * seg, 0.0)


# ------------------------------------------------------------------ spatial

def extract_poi(poi, center, radius: float = RADIUS_KM) -> np.ndarray:
    """Counts of POI strictly within ``radius`` per (direction, category).

    ``poi`` is an (n, 3) array-like of ``(x_km, y_km, category)`` rows.
    Entry ``direction * 12 + category``.
    """
    out = np.zeros(POI_DIM)
    arr = np.asarray(poi, dtype=float).reshape(-1, 3)
    if len(arr) == 0:
        return out
    center = np.asarray(center, dtype=float)
    rel = arr[:, :2] - center
    inside = np.hypot(rel[:, 0], rel[:, 1]) < radius
    if not inside.any():
        return out
    q = quadrant(bearing_deg(center, arr[inside, :2]))
    idx = q * N_POI_CATEGORIES + arr[inside, 2].astype(int)
    np.add.at(out, idx, 1.0)
    return out


def extract_roads(roads: Sequence[Road], center, radius: float = RADIUS_KM) -> np.ndarray:
    """Total road length (km) inside the disk, per road category."""
    out = np.zeros(ROAD_DIM)
    c = np.asarray(center, dtype=float)[None, :]
    for r in roads:
        v = r.vertices
        for a, b in zip(v[:-1], v[1:]):
            out[r.category] += clipped_length(a, b, c, radius)[0]
    return out


# ------------------------------------------------------------------ normalization

@dataclass
class NormStats:
    """Per-feature zero-mean normalization, fit on the training split."""
    mean: dict[str, np.ndarray] = field(default_factory=dict)
    std: dict[str, np.ndarray] = field(default_factory=dict)

    def fit(self, name: str, values) -> "NormStats":
        v = np.asarray(values, dtype=float)
        v = v.reshape(-1, v.shape[-1]) if v.ndim > 1 else v.reshape(-1, 1)
        mu = np.nanmean(v, axis=0)
        sd = np.nanstd(v, axis=0)
        # constant training columns pass through centered, never divided by ~0
        sd = np.where(sd < SIGMA_FLOOR, 1.0, sd)
        self.mean[name] = mu
        self.std[name] = sd
        return self

    def apply(self, name: str, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean[name]) / self.std[name]

    def invert(self, name: str, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std[name] + self.mean[name]

    def to_dict(self) -> dict:
        return {k: {"mean": self.mean[k].tolist(), "std": self.std[k].tolist()}
                for k in sorted(self.mean)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        ns = cls()
        for k, v in d.items():
            ns.mean[k] = np.asarray(v["mean"], dtype=float)
            ns.std[k] = np.asarray(v["std"], dtype=float)
        return ns

    def __eq__(self, other):
        return (isinstance(other, NormStats) and self.mean.keys() == other.mean.keys()
                and all(np.array_equal(self.mean[k], other.mean[k])
                        and np.array_equal(self.std[k], other.std[k]) for k in self.mean))


def encode_meteorology(obs, stats: NormStats) -> np.ndarray:
    """One weather observation -> 31-dim vector.

    ``obs`` is a mapping with ``weather_cat``, ``wind_dir_cat`` and the
    numeric fields ``temp``, ``humidity``, ``pressure``, ``wind_speed``.
    """
    wc, dc = int(obs["weather_cat"]), int(obs["wind_dir_cat"])
    if not 0 <= wc < N_WEATHER_CATEGORIES:
        raise ValueError(f"weather category {wc} out of range")
    if not 0 <= dc < N_WIND_DIR_CATEGORIES:
        raise ValueError(f"wind direction category {dc} out of range")
    out = np.zeros(METEO_DIM)
    out[wc] = 1.0
    out[N_WEATHER_CATEGORIES + dc] = 1.0
    out[N_WEATHER_CATEGORIES + N_WIND_DIR_CATEGORIES:] = stats.apply(
        "meteo", [float(obs[k]) for k in METEO_NUMERIC])
    return out


def encode_meteorology_series(weather: dict, district: int, stats: NormStats) -> np.ndarray:
    """Whole-series version of :func:`encode_meteorology`, shape (H, 31)."""
    wc = weather["weather_cat"][district].astype(int)
    dc = weather["wind_dir_cat"][district].astype(int)
    if wc.min() < 0 or wc.max() >= N_WEATHER_CATEGORIES:
        raise ValueError("weather category out of range")
    if dc.min() < 0 or dc.max() >= N_WIND_DIR_CATEGORIES:
        raise ValueError("wind direction category out of range")
    H = len(wc)
    out = np.zeros((H, METEO_DIM))
    out[np.arange(H), wc] = 1.0
    out[np.arange(H), N_WEATHER_CATEGORIES + dc] = 1.0
    num = np.stack([weather[k][district] for k in METEO_NUMERIC], axis=1)
    out[:, N_WEATHER_CATEGORIES + N_WIND_DIR_CATEGORIES:] = stats.apply("meteo", num)
    return out


def extract_geo(station, target, stats: NormStats) -> np.ndarray:
    """Normalized distance + one-hot bearing sector of the station seen from the target.

    Coincident points get sector 0.
    """
    s = np.asarray(station, dtype=float)
    t = np.asarray(target, dtype=float)
    dist = float(np.hypot(*(s - t)))
    out = np.zeros(GEO_DIM)
    out[0] = stats.apply("dist", [dist])[0]
    sector = 0 if dist == 0.0 else int(sector8(bearing_deg(t, s)))
    out[1 + sector] = 1.0
    return out


# ------------------------------------------------------------------ samples

@dataclass(frozen=True)
class SplitSpec:
    train: tuple[int, ...]           # candidate-pool station ids
    test: tuple[int, ...]            # target station ids
    val_fraction: float = 0.1

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ValueError("train and test stations overlap")
        if not self.train:
            raise ValueError("empty candidate pool")
        if not (0 < self.val_fraction < 0.5):
            raise ValueError("val_fraction must be in (0, 0.5)")


def compute_norm_stats(dataset: CityDataset, pool: Sequence[int], pollutant: str) -> NormStats:
    """Fit every normalizer on candidate-pool stations only."""
    pool = np.asarray(sorted(pool), dtype=int)
    xy = dataset.stations[pool]
    ns = NormStats()
    districts = sorted(set(np.atleast_1d(dataset.district_of(xy)).tolist()))
    num = np.concatenate([np.stack([dataset.weather[k][d] for k in METEO_NUMERIC], axis=1)
                          for d in districts])
    ns.fit("meteo", num)
    poi = _poi_table(dataset)
    ns.fit("poi", np.stack([extract_poi(poi, c) for c in xy]))
    ns.fit("road", np.stack([extract_roads(dataset.roads, c) for c in xy]))
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    off = ~np.eye(len(pool), dtype=bool)
    ns.fit("dist", dist[off] if off.any() else np.zeros(1))
    ns.fit("iaqi", dataset.aqi[pollutant][pool].reshape(-1))
    return ns


def _poi_table(dataset: CityDataset) -> np.ndarray:
    return np.column_stack([dataset.poi_xy, dataset.poi_cat]).reshape(-1, 3)


class FeatureContext:
    """Normalized per-station and per-district series shared by many samples."""

    def __init__(self, dataset: CityDataset, stats: NormStats, pollutant: str, T: int):
        if T < 1:
            raise ValueError("window length T must be >= 1")
        self.dataset = dataset
        self.stats = stats
        self.pollutant = pollutant
        self.T = T
        self.poi = _poi_table(dataset)
        xy = dataset.stations
        self.station_xy = xy
        self.station_district = np.atleast_1d(dataset.district_of(xy))
        self.station_static = np.stack([self.spatial(c) for c in xy]) if len(xy) else \
            np.zeros((0, TARGET_SPATIAL_DIM))
        self.district_meteo = np.stack([encode_meteorology_series(dataset.weather, d, stats)
                                        for d in range(dataset.weather["temp"].shape[0])])
        iaqi = stats.apply("iaqi", dataset.aqi[pollutant][..., None])       # (S, H, 1)
        self.station_temporal = np.concatenate(
            [self.district_meteo[self.station_district], iaqi], axis=2)     # (S, H, 32)
        self.raw_iaqi = dataset.aqi[pollutant]

    def spatial(self, center) -> np.ndarray:
        return np.concatenate([self.stats.apply("poi", extract_poi(self.poi, center)),
                               self.stats.apply("road", extract_roads(self.dataset.roads, center))])

    def geo(self, cand_ids: np.ndarray, target_xy) -> np.ndarray:
        rel = self.station_xy[cand_ids] - np.asarray(target_xy, dtype=float)
        dist = np.hypot(rel[:, 0], rel[:, 1])
        out = np.zeros((len(cand_ids), GEO_DIM))
        out[:, 0] = self.stats.apply("dist", dist[:, None])[:, 0]
        sec = np.where(dist == 0.0, 0, sector8(np.degrees(np.arctan2(rel[:, 0], rel[:, 1]))))
        out[np.arange(len(cand_ids)), 1 + sec] = 1.0
        return out


@dataclass(eq=False)
class Sample:
    """One (target, hour) inference instance.

    Feature blocks are materialized on access from the shared context.
    """
    ctx: FeatureContext
    t: int
    target_xy: np.ndarray
    target_id: int                   # -1 for arbitrary query points
    target_district: int
    target_static: np.ndarray        # (52,)
    cand_ids: np.ndarray             # (N,)
    cand_dist: np.ndarray            # (N,) km
    cand_sector: np.ndarray          # (N,)
    cand_geo: np.ndarray             # (N, 9)
    truth: float                     # raw IAQI, NaN when unknown

    @property
    def x_l_S(self) -> np.ndarray:
        return self.target_static

    @property
    def x_l_T(self) -> np.ndarray:
        T = self.ctx.T
        return self.ctx.district_meteo[self.target_district, self.t - T + 1:self.t + 1]

    @property
    def x_s_S(self) -> np.ndarray:
        return np.concatenate([self.ctx.station_static[self.cand_ids], self.cand_geo], axis=1)

    @property
    def x_s_T(self) -> np.ndarray:
        T = self.ctx.T
        return self.ctx.station_temporal[self.cand_ids, self.t - T + 1:self.t + 1]

    @property
    def n_candidates(self) -> int:
        return len(self.cand_ids)

    @property
    def truth_norm(self) -> float:
        return float(self.ctx.stats.apply("iaqi", [self.truth])[0])

    def candidate_iaqi(self) -> np.ndarray:
        """Raw IAQI readings of the candidates at hour t."""
        return self.ctx.raw_iaqi[self.cand_ids, self.t]

    def distance_order(self) -> np.ndarray:
        """Candidate positions sorted by ascending distance, ties by station id."""
        return np.lexsort((self.cand_ids, self.cand_dist))

    def wind(self) -> tuple[float, float]:
        w = self.ctx.dataset.weather
        return (float(w["wind_speed"][self.target_district, self.t]),
                float(w["wind_dir_deg"][self.target_district, self.t]))

    def restrict(self, positions) -> "Sample":
        """Same sample with only the given candidate positions kept."""
        pos = np.asarray(positions, dtype=int)
        return Sample(self.ctx, self.t, self.target_xy, self.target_id, self.target_district,
                      self.target_static, self.cand_ids[pos], self.cand_dist[pos],
                      self.cand_sector[pos], self.cand_geo[pos], self.truth)


def make_sample(ctx: FeatureContext, target_xy, t: int, candidates: Sequence[int],
                target_id: int = -1, truth: float = float("nan")) -> Sample:
    T = ctx.T
    if t - T + 1 < 0 or t >= ctx.dataset.n_hours:
        raise ValueError(f"hour {t} lacks a full {T}-hour window")
    cand = np.asarray([c for c in candidates if c != target_id], dtype=int)
    if len(cand) == 0:
        raise ValueError("empty candidate pool")
    txy = np.asarray(target_xy, dtype=float)
    if target_id >= 0:
        static = ctx.station_static[target_id]
    else:
        static = ctx.spatial(txy)
    rel = ctx.station_xy[cand] - txy
    dist = np.hypot(rel[:, 0], rel[:, 1])
    sector = np.where(dist == 0.0, 0, sector8(np.degrees(np.arctan2(rel[:, 0], rel[:, 1]))))
    return Sample(ctx, int(t), txy, int(target_id), int(ctx.dataset.district_of(txy)),
                  static, cand, dist, sector.astype(int), ctx.geo(cand, txy), float(truth))


def build_samples(dataset: CityDataset, split: SplitSpec, T: int, *, stats: NormStats | None = None,
                  pollutant: str | None = None, targets: str = "train",
                  hours: Sequence[int] | None = None,
                  ctx: FeatureContext | None = None) -> list[Sample]:
    """Samples for every (target station, hour); ordered by (station_id, t).

    ``targets="train"`` uses pool stations as leave-one-out targets,
    ``targets="test"`` uses the held-out stations.  Samples whose target
    reading or any candidate window value is missing are dropped.
    """
    pollutant = pollutant or dataset.config.pollutant
    if ctx is None:
        stats = stats or compute_norm_stats(dataset, split.train, pollutant)
        ctx = FeatureContext(dataset, stats, pollutant, T)
    pool = sorted(split.train)
    if not pool:
        raise ValueError("empty candidate pool")
    ids = pool if targets == "train" else sorted(split.test)
    if hours is None:
        hours = range(T - 1, dataset.n_hours)
    hours = [int(h) for h in hours if T - 1 <= h < dataset.n_hours]
    raw = ctx.raw_iaqi
    out = []
    for sid in ids:
        cands = [c for c in pool if c != sid]
        if not cands:
            raise ValueError("empty candidate pool")
        cand_arr = np.asarray(cands)
        for t in hours:
            y = raw[sid, t]
            if np.isnan(y):
                continue
            if np.isnan(raw[cand_arr, t - T + 1:t + 1]).any():
                continue
            out.append(make_sample(ctx, dataset.stations[sid], t, cands, sid, y))
    return out
