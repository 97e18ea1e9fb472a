"""Four-stage training: init, AQR pretraining, policy pretraining with the
AQR frozen, and the joint selector/regressor loop with target networks.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import rmse
from .features import FeatureContext, Sample, SplitSpec, build_samples, compute_norm_stats
from .neural import Params, copy_params, make_optimizer, soft_update
from .regressor import (AqrConfig, AqrParams, NumericError, collate, init_params,
                        predict_batch, save_checkpoint, train_step)
from .selector import (grad_log_pi, init_policy, reward, sample_episodes,
                       select_inference_batch)
from .synthcity import CityDataset

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "stage", "train_loss", "val_rmse", "mean_reward", "mean_selected")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, log_rows: list):
        super().__init__(message)
        self.log_rows = log_rows


@dataclass(frozen=True)
class TrainConfig:
    pollutant: str = "pm25"
    seed: int = 0
    aqr: AqrConfig = field(default_factory=AqrConfig)
    policy_hidden: int = 16
    optimizer: str = "adam"
    aqr_lr: float = 1e-3
    policy_lr: float = 1e-3
    tau: float = 0.01
    batch_size: int = 32
    pretrain_epochs: int = 20
    policy_pretrain_epochs: int = 5
    episodes: int = 50               # L, joint-stage episode cap
    patience: int = 10
    reward_scale: float = 1.0
    use_baseline: bool = False
    baseline_decay: float = 0.9
    val_fraction: float = 0.1
    hour_stride: int = 1             # use every n-th hour as a sample timestamp
    max_train_samples: int | None = None
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.aqr_lr <= 0 or self.policy_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not 0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must be in (0, 0.5)")
        if not 0 <= self.aqr.dropout < 1:
            raise ValueError("dropout rate must be in [0, 1)")

    @property
    def T(self) -> int:
        return self.aqr.T


def split_stations(dataset: CityDataset, seed: int, val_fraction: float = 0.1) -> SplitSpec:
    """Shuffle stations; two thirds form the candidate pool, one third are targets."""
    n = dataset.n_stations
    if n < 3:
        raise ValueError(f"need at least 3 stations for a 2:1 split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(2 * n / 3))
    return SplitSpec(tuple(sorted(int(i) for i in perm[:n_train])),
                     tuple(sorted(int(i) for i in perm[n_train:])), val_fraction)


@dataclass
class DataBundle:
    split: SplitSpec
    ctx: FeatureContext
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]


def prepare_data(dataset: CityDataset, config: TrainConfig) -> DataBundle:
    split = split_stations(dataset, config.seed, config.val_fraction)
    stats = compute_norm_stats(dataset, split.train, config.pollutant)
    ctx = FeatureContext(dataset, stats, config.pollutant, config.T)
    stride = config.hour_stride
    hours = range(config.T - 1, dataset.n_hours, stride)
    test_hours = range(config.T - 1 + stride // 2, dataset.n_hours, stride)
    samples = build_samples(dataset, split, config.T, targets="train", hours=hours, ctx=ctx)
    rng = np.random.default_rng([config.seed, 1])
    perm = rng.permutation(len(samples))
    if config.max_train_samples is not None:
        perm = perm[:config.max_train_samples]
    n_val = max(1, int(round(config.val_fraction * len(perm))))
    val = [samples[i] for i in sorted(perm[:n_val])]
    train = [samples[i] for i in sorted(perm[n_val:])]
    test = build_samples(dataset, split, config.T, targets="test", hours=test_hours, ctx=ctx)
    return DataBundle(split, ctx, train, val, test)


def restrict_nearest(samples: Sequence[Sample], k: int | None) -> list[Sample]:
    """Keep only the ``k`` nearest candidates of each sample (all when None)."""
    if k is None:
        return list(samples)
    if k < 1:
        raise ValueError("k must be >= 1")
    return [s.restrict(np.sort(s.distance_order()[:k])) for s in samples]


# ---------------------------------------------------------------- evaluation helpers

def predict_all(aqr: AqrParams, samples: Sequence[Sample]) -> np.ndarray:
    return predict_batch(aqr, samples)


def predict_selected(aqr: AqrParams, theta: Params, samples: Sequence[Sample],
                     batch_size: int = 256):
    """Greedy-selector predictions (IAQI) and the masks used."""
    preds, masks = [], []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        m, _ = select_inference_batch(chunk, aqr, theta)
        ml = [m[b, :s.n_candidates] for b, s in enumerate(chunk)]
        preds.append(predict_batch(aqr, chunk, ml, batch_size))
        masks.extend(ml)
    return (np.concatenate(preds) if preds else np.zeros(0)), masks


def _truth(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([s.truth for s in samples])


def _rmse(truth, pred) -> float:
    return rmse(np.column_stack([truth, pred]))


# ---------------------------------------------------------------- stages

def _batches(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, size):
        yield perm[i:i + size]


def train_aqr(aqr: AqrParams, train: Sequence[Sample], val: Sequence[Sample],
              config: TrainConfig, rng: np.random.Generator, stage: str = "aqr_pretrain",
              epochs: int | None = None, log_rows: list | None = None) -> AqrParams:
    """Minibatch MSE training on all candidates with early stopping; returns the best params."""
    epochs = config.pretrain_epochs if epochs is None else epochs
    opt = make_optimizer(config.optimizer, config.aqr_lr)
    truth = _truth(val)
    best = aqr.copy()
    best_rmse = _rmse(truth, predict_all(aqr, val))
    initial = best_rmse
    stale = 0
    mean_sel = float(np.mean([s.n_candidates for s in train])) if train else 0.0
    for epoch in range(1, epochs + 1):
        losses = []
        for idx in _batches(len(train), config.batch_size, rng):
            batch = collate([train[i] for i in idx])
            losses.append(train_step(aqr, batch, opt, rng) * len(idx))
        pred = predict_all(aqr, val)
        v = _rmse(truth, pred)
        mr = float(np.mean(reward(config.reward_scale * aqr.norm.apply("iaqi", pred),
                                  config.reward_scale * aqr.norm.apply("iaqi", truth))))
        row = (epoch, stage, sum(losses) / len(train), v, mr, mean_sel)
        if log_rows is not None:
            log_rows.append(row)
        log.info("%s epoch %d loss %.4f val_rmse %.3f", stage, epoch, row[2], v)
        if not math.isfinite(v) or v > config.divergence_factor * initial:
            raise TrainingDiverged(f"{stage}: validation RMSE {v} diverged from {initial}",
                                   log_rows or [])
        if v < best_rmse:
            best, best_rmse, stale = aqr.copy(), v, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best


@dataclass
class JointState:
    aqr: AqrParams
    aqr_target: AqrParams
    theta: Params
    theta_target: Params
    baseline: float = 0.0


def _policy_pass(state: JointState, samples: Sequence[Sample], config: TrainConfig,
                 rng: np.random.Generator, chunk: int = 128):
    """One shuffled pass of per-sample REINFORCE updates; returns the episodes."""
    order = rng.permutation(len(samples))
    episodes = [None] * len(samples)
    for i in range(0, len(order), chunk):
        idx = order[i:i + chunk]
        eps = sample_episodes([samples[j] for j in idx], state.aqr, state.theta_target, rng,
                              config.reward_scale)
        for j, ep in zip(idx, eps):
            episodes[j] = ep
    theta = state.theta
    for j in order:
        ep = episodes[j]
        adv = ep.reward - (state.baseline if config.use_baseline else 0.0)
        g = grad_log_pi(ep.states, ep.actions, theta, adv)
        if not all(np.all(np.isfinite(v)) for v in g.values()):
            raise NumericError("non-finite policy gradient")
        theta = {k: theta[k] + config.policy_lr * g[k] for k in theta}
        if config.use_baseline:
            state.baseline = (config.baseline_decay * state.baseline
                              + (1 - config.baseline_decay) * ep.reward)
    state.theta = theta
    return episodes


def _val_selected(state: JointState, val: Sequence[Sample], config: TrainConfig):
    pred, masks = predict_selected(state.aqr, state.theta, val)
    truth = _truth(val)
    r = reward(config.reward_scale * state.aqr.norm.apply("iaqi", pred),
               config.reward_scale * state.aqr.norm.apply("iaqi", truth))
    return _rmse(truth, pred), float(np.mean(r)), float(np.mean([m.sum() for m in masks]))


def run_policy_stage(state: JointState, train: Sequence[Sample], val: Sequence[Sample],
                     config: TrainConfig, rng: np.random.Generator, joint: bool,
                     log_rows: list, epochs: int) -> JointState:
    stage = "joint" if joint else "policy_pretrain"
    opt = make_optimizer(config.optimizer, config.aqr_lr)
    v0, _, _ = _val_selected(state, val, config)
    initial = v0
    best = (state.aqr.copy(), copy_params(state.theta), v0)
    stale = 0
    for epoch in range(1, epochs + 1):
        episodes = _policy_pass(state, train, config, rng)
        mean_r = float(np.mean([e.reward for e in episodes]))
        if joint:
            losses = []
            for idx in _batches(len(train), config.batch_size, rng):
                batch = collate([train[i] for i in idx],
                                [_mask(episodes[i], train[i]) for i in idx])
                losses.append(train_step(state.aqr, batch, opt, rng) * len(idx))
            train_loss = sum(losses) / len(train)
            state.aqr_target = state.aqr_target.with_arrays(
                soft_update(state.aqr_target.arrays, state.aqr.arrays, config.tau))
        else:
            train_loss = float(np.mean([(e.y - s.truth_norm) ** 2
                                        for e, s in zip(episodes, train)]))
        state.theta_target = soft_update(state.theta_target, state.theta, config.tau)
        v, _, mean_sel = _val_selected(state, val, config)
        log_rows.append((epoch, stage, train_loss, v, mean_r, mean_sel))
        log.info("%s epoch %d reward %.4f val_rmse %.3f selected %.2f",
                 stage, epoch, mean_r, v, mean_sel)
        if not math.isfinite(v) or v > config.divergence_factor * initial:
            raise TrainingDiverged(f"{stage}: validation RMSE {v} diverged from {initial}",
                                   log_rows)
        if v < best[2]:
            best, stale = (state.aqr.copy(), copy_params(state.theta), v), 0
        else:
            stale += 1
            if joint and stale >= config.patience:
                break
    if joint:
        state.aqr, state.theta = best[0], best[1]
    return state


def _mask(ep, sample: Sample) -> np.ndarray:
    m = np.zeros(sample.n_candidates, dtype=bool)
    m[ep.selected] = True
    return m


@dataclass
class TrainResult:
    aqr: AqrParams
    policy: Params
    log_rows: list
    data: DataBundle
    aqr_pretrained: AqrParams        # stage-2 output, i.e. the no-selector baseline
    aqr_after_policy_pretrain: AqrParams
    policy_pretrained: Params
    aqr_target: AqrParams
    policy_target: Params
    checkpoint: Path | None = None


def run_training(dataset: CityDataset, config: TrainConfig, out_dir=None,
                 data: DataBundle | None = None,
                 pretrained: AqrParams | None = None) -> TrainResult:
    """Pretrain, policy-pretrain and joint stages; writes ``model.ckpt`` and ``train_log.csv`` to ``out_dir``.

    ``pretrained`` skips stage 2 (it must be the stage-2 output for the same data).
    """
    data = data or prepare_data(dataset, config)
    if not data.train or not data.val:
        raise ValueError("not enough samples to train")
    # separate streams so stage 2 matches a stand-alone AQR-all training run
    rng = np.random.default_rng([config.seed, 2])
    aqr = init_params(config.aqr, rng, data.ctx.stats, config.pollutant)
    log_rows: list = []
    if pretrained is None:
        aqr = train_aqr(aqr, data.train, data.val, config, rng, log_rows=log_rows)
    else:
        aqr = pretrained.copy()
    stage2 = aqr.copy()

    rng = np.random.default_rng([config.seed, 3])
    theta = init_policy(3 * config.aqr.z_dim, config.policy_hidden, rng, config.aqr.init_scale)

    state = JointState(aqr, aqr.copy(), theta, copy_params(theta))
    state = run_policy_stage(state, data.train, data.val, config, rng, joint=False,
                             log_rows=log_rows, epochs=config.policy_pretrain_epochs)
    stage3_aqr = state.aqr.copy()
    stage3_policy = copy_params(state.theta)
    state.theta_target = copy_params(state.theta)
    state.aqr_target = state.aqr.copy()
    state = run_policy_stage(state, data.train, data.val, config, rng, joint=True,
                             log_rows=log_rows, epochs=config.episodes)

    result = TrainResult(state.aqr, state.theta, log_rows, data, stage2, stage3_aqr,
                         stage3_policy, state.aqr_target, state.theta_target)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = save_checkpoint(
            out / "model.ckpt", state.aqr, state.theta,
            {"train_config": _config_echo(config), "split": asdict(data.split)})
        write_log(log_rows, out / "train_log.csv")
    return result


def _config_echo(config: TrainConfig) -> dict:
    d = asdict(config)
    return d


def write_log(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])
    return path


def benchmark_config(**overrides) -> TrainConfig:
    """Reduced-width settings sized for a single CPU core.

    Layer widths, window and sampling stride are scaled down from the
    full-size defaults.  The selector uses a moving-average reward
    baseline and a sharper reward (scale 3), which keeps its greedy
    choice from collapsing onto one or every station in short runs.
    """
    aqr = AqrConfig(T=8, lstm_hidden=16, lstm_layers=2, target_spatial=8, station_spatial=16,
                    z_dim=16, att_hidden=16, out_hidden=16, dropout=0.0, init_scale=0.1)
    base = dict(aqr=aqr, hour_stride=6, pretrain_epochs=15, policy_pretrain_epochs=3,
                episodes=10, patience=4, aqr_lr=3e-3, policy_lr=1e-2, tau=0.1,
                use_baseline=True, reward_scale=3.0)
    aqr_over = {k: overrides.pop(k) for k in list(overrides) if k in AqrConfig.__dataclass_fields__}
    if aqr_over:
        base["aqr"] = replace(aqr, **aqr_over)
    base.update(overrides)
    return TrainConfig(**base)
