"""Metrics and IAQI conversions.

Breakpoints follow the Chinese ambient air quality index standard
(HJ 633-2012, 24-hour averages for particulate matter).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

IAQI_MAX = 500.0


@dataclass(frozen=True)
class IaqiBreakpoints:
    concentration: tuple[float, ...]
    iaqi: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.concentration)
        i = np.asarray(self.iaqi)
        if c.shape != i.shape or c.size < 2:
            raise ValueError("breakpoint tables must have equal length >= 2")
        if np.any(np.diff(c) <= 0) or np.any(np.diff(i) <= 0):
            raise ValueError("breakpoints must be strictly increasing")


BREAKPOINTS = {
    "pm25": IaqiBreakpoints(
        (0.0, 35.0, 75.0, 115.0, 150.0, 250.0, 350.0, 500.0),
        (0.0, 50.0, 100.0, 150.0, 200.0, 300.0, 400.0, 500.0),
    ),
    "pm10": IaqiBreakpoints(
        (0.0, 50.0, 150.0, 250.0, 350.0, 420.0, 500.0, 600.0),
        (0.0, 50.0, 100.0, 150.0, 200.0, 300.0, 400.0, 500.0),
    ),
}

# upper bounds (inclusive) of levels 1..5; anything above is level 6
LEVEL_UPPER = (50.0, 100.0, 150.0, 200.0, 300.0)


def concentration_to_iaqi(c, pollutant: str = "pm25"):
    """Piecewise-linear concentration -> IAQI, clamped to 500 at the top.

    Accepts a scalar or an array and returns the same kind.
    """
    try:
        bp = BREAKPOINTS[pollutant]
    except KeyError:
        raise ValueError(f"unknown pollutant {pollutant!r}") from None
    arr = np.asarray(c, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("concentration must be >= 0")
    out = np.interp(arr, bp.concentration, bp.iaqi, right=IAQI_MAX)
    if np.ndim(c) == 0:
        return float(out)
    return out


def iaqi_level(iaqi) -> int | np.ndarray:
    """Map IAQI to the 6-level scale (1..6)."""
    arr = np.asarray(iaqi, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("IAQI must be >= 0")
    level = 1 + np.searchsorted(LEVEL_UPPER, arr, side="left")
    if np.ndim(iaqi) == 0:
        return int(level)
    return level


def _pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(pairs, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one (truth, prediction) pair")
    arr = arr.reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def rmse(pairs) -> float:
    truth, pred = _pairs(pairs)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def accuracy(pairs) -> float:
    """Fraction of pairs whose IAQI levels agree.

    Negative predictions are treated as level 1.
    """
    truth, pred = _pairs(pairs)
    lt = iaqi_level(np.maximum(truth, 0.0))
    lp = iaqi_level(np.maximum(pred, 0.0))
    return float(np.mean(lt == lp))


@dataclass
class MetricsRow:
    method: str
    pollutant: str
    n_samples: int
    rmse: float
    accuracy: float
    k: str = ""


def metrics_row(method: str, pollutant: str, truth: Sequence[float],
                pred: Sequence[float], k: str = "") -> MetricsRow:
    pairs = np.column_stack([np.asarray(truth, float), np.asarray(pred, float)])
    return MetricsRow(method, pollutant, len(pairs), rmse(pairs), accuracy(pairs), k)


def write_metrics_report(rows: Iterable[MetricsRow], path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.txt``; returns both paths."""
    rows = list(rows)
    base = Path(path)
    if base.suffix in (".csv", ".txt"):
        base = base.with_suffix("")
    csv_path = base.with_suffix(".csv")
    txt_path = base.with_suffix(".txt")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "k", "pollutant", "n_samples", "rmse", "accuracy"])
        for r in rows:
            w.writerow([r.method, r.k, r.pollutant, r.n_samples,
                        repr(float(r.rmse)), repr(float(r.accuracy))])
    width = max([len(r.method) + len(r.k) + 1 for r in rows] + [6])
    lines = [f"{'method':<{width}}  pollutant  n_samples  rmse        accuracy"]
    for r in rows:
        name = f"{r.method}-{r.k}" if r.k else r.method
        lines.append(f"{name:<{width}}  {r.pollutant:<9}  {r.n_samples:>9d}  "
                     f"{r.rmse:<10.4f}  {r.accuracy:.4f}")
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return csv_path, txt_path


def read_metrics_report(path) -> list[MetricsRow]:
    with open(Path(path).with_suffix(".csv"), encoding="utf-8") as fh:
        return [MetricsRow(r["method"], r["pollutant"], int(r["n_samples"]),
                           float(r["rmse"]), float(r["accuracy"]), r["k"])
                for r in csv.DictReader(fh)]


def is_finite(x) -> bool:
    return bool(np.all(np.isfinite(x))) if np.ndim(x) else math.isfinite(x)
