"""Benchmark harness shared by the command line, the demos and the tests.

``run_benchmark`` trains and scores every method on one synthetic city;
the remaining helpers summarize what the selector learned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import (BaselineSpec, SweepEntry, aqr_k_sweep, baseline_predict,
                        mean_pairwise_distance)
from .evaluation import MetricsRow, metrics_row, write_metrics_report
from .features import Sample
from .neural import Params
from .regressor import AqrParams, collate, encode_batch, head_forward
from .selector import grad_log_pi, init_policy, reward, rollout, select_inference_batch
from .synthcity import CityDataset
from .training import (DataBundle, TrainConfig, TrainResult, predict_selected, prepare_data,
                       run_training)

log = logging.getLogger(__name__)

SWEEP_KS = (3, 5, 10, "all")


@dataclass
class BenchmarkResult:
    config: TrainConfig
    data: DataBundle
    rows: list[MetricsRow]
    sweep: list[SweepEntry]
    training: TrainResult
    predictions: dict[str, np.ndarray] = field(default_factory=dict)
    masks: list[np.ndarray] = field(default_factory=list)   # AirRL test selections

    def row(self, method: str, k: str = "") -> MetricsRow:
        for r in self.rows:
            if r.method == method and r.k == k:
                return r
        raise KeyError((method, k))

    def rmse(self, method: str, k: str = "") -> float:
        return self.row(method, k).rmse

    def accuracy(self, method: str, k: str = "") -> float:
        return self.row(method, k).accuracy


def pool_sigma(data: DataBundle) -> float:
    """Gaussian bandwidth: mean pairwise distance between candidate-pool stations."""
    return mean_pairwise_distance(data.ctx.station_xy[list(data.split.train)])


def baseline_rows(data: DataBundle, pollutant: str, knn_k: int = 5):
    """Metrics rows and predictions of the interpolation baselines on the test set."""
    truth = np.array([s.truth for s in data.test])
    sigma = pool_sigma(data)
    specs = [("linear", BaselineSpec("linear"), ""),
             ("gaussian", BaselineSpec("gaussian", sigma=sigma), ""),
             ("gaussian_norm", BaselineSpec("gaussian", sigma=sigma, normalize=True), ""),
             ("knn", BaselineSpec("knn", k=knn_k), str(knn_k))]
    rows, preds = [], {}
    for name, spec, k in specs:
        p = baseline_predict(data.test, spec)
        preds[name] = p
        rows.append(metrics_row(name, pollutant, truth, p, k))
    return rows, preds


def run_benchmark(dataset: CityDataset, config: TrainConfig, ks: Sequence = SWEEP_KS,
                  out_dir=None) -> BenchmarkResult:
    """Baselines, the AQR-k sweep and the full selector pipeline on one city.

    The all-stations sweep entry doubles as the regressor pretraining
    stage of the selector pipeline, so it is trained only once.
    """
    data = prepare_data(dataset, config)
    pol = config.pollutant
    truth = np.array([s.truth for s in data.test])
    rows, preds = baseline_rows(data, pol)

    ks = list(ks)
    if "all" not in [str(k).lower() for k in ks]:
        ks.append("all")
    cache: dict = {}
    sweep = aqr_k_sweep(dataset, ks, config, data=data, cache=cache)
    for e in sweep:
        rows.append(MetricsRow("aqr", pol, len(truth), e.rmse, e.accuracy, e.label))
        preds[f"aqr-{e.label}"] = e.predictions

    result = run_training(dataset, config, out_dir=out_dir, data=data,
                          pretrained=cache[None].params)
    p, masks = predict_selected(result.aqr, result.policy, data.test)
    preds["airrl"] = p
    rows.append(metrics_row("airrl", pol, truth, p))
    if out_dir is not None:
        write_metrics_report(rows, Path(out_dir) / "metrics")
    return BenchmarkResult(config, data, rows, sweep, result, preds, masks)


# ---------------------------------------------------------------- selection statistics

def upwind_mask(sample: Sample) -> np.ndarray:
    """Candidates on the upwind side of the line through the target across the wind."""
    _, wd = sample.wind()
    source = np.array([np.sin(np.radians(wd)), np.cos(np.radians(wd))])
    rel = sample.ctx.station_xy[sample.cand_ids] - np.asarray(sample.target_xy)
    return rel @ source > 0


@dataclass
class SelectionStats:
    upwind: float                    # mean selection frequency, upwind half-plane
    downwind: float
    terciles: np.ndarray             # frequency by per-sample distance tercile, near -> far
    n_samples: int
    mean_selected: float

    @property
    def upwind_ratio(self) -> float:
        return self.upwind / self.downwind if self.downwind > 0 else float("inf")

    @property
    def tercile_monotone(self) -> bool:
        """Non-increasing from near to far, with the nearest tercile strictly on top."""
        t = self.terciles
        return bool(np.all(np.diff(t) <= 0) and t[0] > t[-1])


def selection_statistics(samples: Sequence[Sample], masks: Sequence[np.ndarray],
                         min_speed: float = 1.0) -> SelectionStats:
    """Upwind/downwind frequencies (windy hours only) and distance-tercile frequencies."""
    up = [0.0, 0]
    down = [0.0, 0]
    terc = np.zeros(3)
    terc_n = np.zeros(3)
    for s, m in zip(samples, masks):
        m = np.asarray(m, dtype=bool)
        rank = np.empty(s.n_candidates, dtype=int)
        rank[s.distance_order()] = np.arange(s.n_candidates)
        bucket = rank * 3 // s.n_candidates
        np.add.at(terc, bucket, m)
        np.add.at(terc_n, bucket, 1)
        speed, _ = s.wind()
        if speed >= min_speed:
            u = upwind_mask(s)
            up[0] += m[u].sum()
            up[1] += u.sum()
            down[0] += m[~u].sum()
            down[1] += (~u).sum()
    return SelectionStats(up[0] / max(up[1], 1), down[0] / max(down[1], 1),
                          terc / np.maximum(terc_n, 1), len(masks),
                          float(np.mean([np.sum(m) for m in masks])) if masks else 0.0)


# ---------------------------------------------------------------- subset oracle

@dataclass
class OracleComparison:
    selected: np.ndarray             # reward of the greedy selection, per sample
    everything: np.ndarray           # reward using every candidate
    oracle: np.ndarray               # best reward over all nonempty subsets

    @property
    def fraction_not_worse(self) -> float:
        return float(np.mean(self.selected >= self.everything))


def subset_masks(n: int) -> np.ndarray:
    """All ``2**n - 1`` nonempty subsets of ``n`` items as a boolean (M, n) array."""
    if n < 1:
        raise ValueError("need at least one item")
    codes = np.arange(1, 2 ** n)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(bool)


def subset_rewards(sample: Sample, aqr: AqrParams, reward_scale: float = 1.0,
                   max_candidates: int = 8) -> np.ndarray:
    """Reward of every nonempty candidate subset, ordered like ``subset_masks``."""
    n = sample.n_candidates
    if n > max_candidates:
        raise ValueError(f"{n} candidates exceeds the enumeration cap of {max_candidates}")
    batch = collate([sample])
    z_l, z_s = encode_batch(aqr, batch)
    masks = subset_masks(n)
    M = len(masks)
    y, _ = head_forward(aqr, np.repeat(z_l, M, axis=0), np.repeat(z_s, M, axis=0), masks)
    return reward(reward_scale * y, reward_scale * sample.truth_norm)


def oracle_comparison(samples: Sequence[Sample], aqr: AqrParams, theta: Params,
                      reward_scale: float = 1.0, max_candidates: int = 8) -> OracleComparison:
    sel, full, best = [], [], []
    for s in samples:
        r = subset_rewards(s, aqr, reward_scale, max_candidates)
        m, _ = select_inference_batch([s], aqr, theta)
        code = int(np.sum(m[0, :s.n_candidates] << np.arange(s.n_candidates)))
        sel.append(r[code - 1])
        full.append(r[-1])
        best.append(r.max())
    return OracleComparison(np.array(sel), np.array(full), np.array(best))



# ---------------------------------------------------------------- two-candidate bandit

@dataclass
class BanditOutcome:
    p_good: float
    p_bad: float
    updates: int                     # updates until both thresholds held, or the cap

    def solved(self, hi: float = 0.9, lo: float = 0.1) -> bool:
        return self.p_good >= hi and self.p_bad <= lo


def _bandit_rollout(theta, z_l, z_s, order, rng=None):
    B = len(order)
    valid = np.ones((B, len(z_s)), dtype=bool)
    return rollout(np.repeat(z_l[None], B, 0), np.repeat(z_s[None], B, 0), valid, order, theta, rng)


def _bandit_probs(theta: Params, z_l, z_s):
    """Keep probabilities of A and B when A is visited first."""
    _, _, probs, _ = _bandit_rollout(theta, z_l, z_s, order=np.array([[0, 1]]))
    return float(probs[0, 0]), float(probs[0, 1])


def two_candidate_bandit(seed: int, updates: int = 500, lr: float = 0.3, hidden: int = 8,
                         baseline_decay: float = 0.9,
                         credit_fallback: bool = False) -> BanditOutcome:
    """A selector facing one good station A and one bad station B.

    Keeping A alone earns 0.95 and every other choice earns 0.05.  The
    visiting order is random per episode, so the policy has to tell the
    stations apart by their embeddings.  With ``credit_fallback`` an
    episode that keeps nothing is scored on the argmax-p fallback
    station instead, which makes "drop both" as good as "keep A".
    """
    rng = np.random.default_rng(seed)
    z_l = np.array([1.0, 0.0])
    z_s = np.array([[0.5, 1.0], [-0.5, 1.0]])
    theta = init_policy(6, hidden, rng, scale=0.5)
    baseline = 0.0
    solved_at = updates
    for n in range(1, updates + 1):
        order = rng.permutation(2)[None]
        states, actions, _, mask = _bandit_rollout(theta, z_l, z_s, order, rng)
        chosen = mask[0] if credit_fallback else actions[0].astype(bool)
        r = 0.95 if chosen.tolist() == [True, False] else 0.05
        g = grad_log_pi(states[0], actions[0], theta, r - baseline)
        theta = {k: theta[k] + lr * g[k] for k in theta}
        baseline = baseline_decay * baseline + (1 - baseline_decay) * r
        pg, pb = _bandit_probs(theta, z_l, z_s)
        if pg >= 0.9 and pb <= 0.1 and solved_at == updates:
            solved_at = n
    pg, pb = _bandit_probs(theta, z_l, z_s)
    return BanditOutcome(pg, pb, solved_at)
