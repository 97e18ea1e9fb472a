"""Comparison methods: inverse-distance and Gaussian interpolation, KNN
averaging, and AQR trained on the k nearest stations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evaluation import accuracy, rmse
from .features import Sample
from .regressor import AqrParams, init_params
from .synthcity import CityDataset

EXACT_HIT_KM = 1e-9
METHODS = ("linear", "gaussian", "knn", "aqr_k")


@dataclass(frozen=True)
class BaselineSpec:
    method: str
    k: int | None = None
    sigma: float | None = None       # gaussian; None = mean pairwise pool distance
    normalize: bool = False          # gaussian

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline {self.method!r}")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")


def _columns(stations):
    arr = np.asarray(stations, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one station")
    arr = arr.reshape(len(arr), -1)
    d, v = arr[:, 0], arr[:, 1]
    if np.any(d < 0):
        raise ValueError("distances must be >= 0")
    ids = arr[:, 2] if arr.shape[1] > 2 else np.arange(len(arr), dtype=float)
    return d, v, ids


def interp_linear(stations) -> float:
    """Inverse-distance weighted mean of ``(distance, iaqi)`` pairs.

    A station closer than 1e-9 km returns its own value.
    """
    d, v, _ = _columns(stations)
    hit = d < EXACT_HIT_KM
    if hit.any():
        return float(v[np.argmax(hit)])
    w = d.max() / d                  # proportional to 1/d; keeps simple cases exact
    return float(np.sum(w * v) / np.sum(w))


def interp_gaussian(stations, sigma: float, normalize: bool = False) -> float:
    """``sum_i v_i * exp(-d_i^2 / sigma^2) / (sigma * sqrt(2 pi))``.

    The default is the unnormalized sum; ``normalize=True`` divides by the
    total weight instead, giving a proper weighted mean.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    d, v, _ = _columns(stations)
    w = np.exp(-d * d / (sigma * sigma)) / (sigma * math.sqrt(2 * math.pi))
    if normalize:
        s = np.sum(w)
        if s == 0.0:
            return float(v[np.argmin(d)])
        return float(np.sum(w * v) / s)
    return float(np.sum(w * v))


def knn_average(stations, k: int = 5) -> float:
    """Mean value of the ``k`` nearest stations; ties broken by station id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    d, v, ids = _columns(stations)
    order = np.lexsort((ids, d))
    return float(np.mean(v[order[:k]]))


def mean_pairwise_distance(xy) -> float:
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 2:
        raise ValueError("need two or more stations")
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    return float(d[np.triu_indices(len(xy), 1)].mean())


def baseline_predict(samples: Sequence[Sample], spec: BaselineSpec,
                     sigma: float | None = None) -> np.ndarray:
    """Interpolation baselines on each sample's candidates at the sample hour."""
    if spec.method == "aqr_k":
        raise ValueError("aqr_k needs training; use aqr_k_sweep")
    out = np.empty(len(samples))
    for i, s in enumerate(samples):
        rows = np.column_stack([s.cand_dist, s.candidate_iaqi(), s.cand_ids])
        if spec.method == "linear":
            out[i] = interp_linear(rows)
        elif spec.method == "knn":
            out[i] = knn_average(rows, spec.k or 5)
        else:
            sg = spec.sigma or sigma
            if sg is None:
                sg = mean_pairwise_distance(s.ctx.station_xy[s.cand_ids])
            out[i] = interp_gaussian(rows, sg, spec.normalize)
    return out


@dataclass
class SweepEntry:
    k: int | None                    # None = all stations
    rmse: float
    accuracy: float
    params: AqrParams
    predictions: np.ndarray

    @property
    def label(self) -> str:
        return "all" if self.k is None else str(self.k)


def parse_k(value) -> int | None:
    if value is None or str(value).lower() == "all":
        return None
    k = int(value)
    if k < 1:
        raise ValueError("k must be >= 1 or 'all'")
    return k


def aqr_k_sweep(dataset: CityDataset, ks: Sequence, config, data=None,
                cache: dict | None = None) -> list[SweepEntry]:
    """Train one AQR per ``k`` on the k nearest candidates; report test metrics.

    ``cache`` (k -> SweepEntry) lets callers reuse already trained entries.
    """
    from .training import predict_all, prepare_data, restrict_nearest, train_aqr

    data = data or prepare_data(dataset, config)
    pool = len(data.split.train)
    out = []
    for raw in ks:
        k = parse_k(raw)
        if k is not None and k > pool:
            raise ValueError(f"k={k} exceeds the candidate pool of {pool} stations")
        if cache is not None and k in cache:
            out.append(cache[k])
            continue
        rng = np.random.default_rng([config.seed, 2])
        aqr = init_params(config.aqr, rng, data.ctx.stats, config.pollutant)
        train = restrict_nearest(data.train, k)
        val = restrict_nearest(data.val, k)
        test = restrict_nearest(data.test, k)
        aqr = train_aqr(aqr, train, val, config, rng, stage=f"aqr_k{k or 'all'}")
        pred = predict_all(aqr, test)
        truth = np.array([s.truth for s in test])
        pairs = np.column_stack([truth, pred])
        entry = SweepEntry(k, rmse(pairs), accuracy(pairs), aqr, pred)
        if cache is not None:
            cache[k] = entry
        out.append(entry)
    return out
