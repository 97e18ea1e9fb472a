"""Air Quality Regressor: encoders, attention pooling over selected stations,
and a small output MLP.

The network regresses the z-scored IAQI (training-split statistics);
:func:`predict` de-normalizes back to IAQI units.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import (STATION_SPATIAL_DIM, STATION_TEMPORAL_DIM, TARGET_SPATIAL_DIM,
                       TARGET_TEMPORAL_DIM, NormStats, Sample)
from .neural import (Adam, AttentionParams, Dense, LstmLayer, LstmStack, Params,
                     all_finite, attention_backward, attention_forward, dense_backward,
                     dense_forward, dropout_mask, lstm_backward, lstm_forward, uniform_init)

MAGIC = b"AIRRL\x01"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class AqrConfig:
    T: int = 24
    lstm_hidden: int = 150
    lstm_layers: int = 2
    target_spatial: int = 25
    station_spatial: int = 50
    z_dim: int = 50
    att_hidden: int = 50
    out_hidden: int = 50
    dropout: float = 0.3
    init_scale: float = 1.0
    hybrid_activation: str = "relu"

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H, Z = self.lstm_hidden, self.z_dim
        s: dict[str, tuple[int, ...]] = {
            "tsp.W": (self.target_spatial, TARGET_SPATIAL_DIM),
            "tsp.b": (self.target_spatial,),
            "ssp.W": (self.station_spatial, STATION_SPATIAL_DIM),
            "ssp.b": (self.station_spatial,),
        }
        for prefix, d in (("tlstm", TARGET_TEMPORAL_DIM), ("slstm", STATION_TEMPORAL_DIM)):
            for i in range(self.lstm_layers):
                s[f"{prefix}.{i}.W"] = (4 * H, (d if i == 0 else H) + H)
                s[f"{prefix}.{i}.b"] = (4 * H,)
        s.update({
            "thy.W": (Z, self.target_spatial + H),
            "thy.b": (Z,),
            "shy.W": (Z, self.station_spatial + H),
            "shy.b": (Z,),
            "att.W1": (self.att_hidden, 2 * Z),
            "att.b1": (self.att_hidden,),
            "att.w2": (self.att_hidden,),
            "att.b2": (),
            "out.W": (self.out_hidden, 2 * Z),
            "out.b": (self.out_hidden,),
            "head.W": (1, self.out_hidden),
            "head.b": (1,),
        })
        return s


@dataclass
class AqrParams:
    arrays: Params
    config: AqrConfig
    norm: NormStats = field(default_factory=NormStats)
    pollutant: str = "pm25"

    def __post_init__(self):
        validate_arrays(self.arrays, self.config)

    def copy(self) -> "AqrParams":
        return AqrParams({k: v.copy() for k, v in self.arrays.items()}, self.config,
                         self.norm, self.pollutant)

    def with_arrays(self, arrays: Params) -> "AqrParams":
        return AqrParams(arrays, self.config, self.norm, self.pollutant)

    def __eq__(self, other):
        return (isinstance(other, AqrParams) and self.config == other.config
                and self.pollutant == other.pollutant and self.norm == other.norm
                and self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays))


def validate_arrays(arrays: Params, config: AqrConfig) -> None:
    want = config.shapes()
    if set(arrays) != set(want):
        missing = sorted(set(want) - set(arrays))
        extra = sorted(set(arrays) - set(want))
        raise ValueError(f"AQR parameter names differ: missing {missing}, unexpected {extra}")
    for k, shape in want.items():
        if arrays[k].shape != shape:
            raise ValueError(f"{k}: shape {arrays[k].shape}, expected {shape}")
        if not np.all(np.isfinite(arrays[k])):
            raise ValueError(f"{k}: non-finite entries")


def init_params(config: AqrConfig, rng: np.random.Generator, norm: NormStats | None = None,
                pollutant: str = "pm25") -> AqrParams:
    arrays = {k: uniform_init(s, config.init_scale, rng) for k, s in config.shapes().items()}
    return AqrParams(arrays, config, norm or NormStats(), pollutant)


def zero_params(config: AqrConfig, norm: NormStats | None = None) -> AqrParams:
    return AqrParams({k: np.zeros(s) for k, s in config.shapes().items()}, config,
                     norm or NormStats())


def _stack(p: Params, prefix: str, n: int) -> LstmStack:
    return LstmStack([LstmLayer(p[f"{prefix}.{i}.W"], p[f"{prefix}.{i}.b"]) for i in range(n)])


def _att(p: Params) -> AttentionParams:
    return AttentionParams(p["att.W1"], p["att.b1"], p["att.w2"], p["att.b2"])


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    """Collated samples; temporal blocks are de-duplicated by (station, hour)."""
    xlS: np.ndarray                 # (B, 52)
    xlT: np.ndarray                 # (Ut, T, 31) unique target windows
    tgt_idx: np.ndarray             # (B,)
    xsS: np.ndarray                 # (B, N, 61)
    xsT: np.ndarray                 # (Us, T, 32) unique station windows
    cand_idx: np.ndarray            # (B, N)
    valid: np.ndarray               # (B, N) bool, False on padding
    y: np.ndarray                   # (B,) normalized truth

    @property
    def size(self) -> int:
        return len(self.xlS)


def collate(samples: Sequence[Sample], masks: Sequence[np.ndarray] | None = None) -> Batch:
    """Stack samples, optionally keeping only candidates where ``masks[b]`` is True."""
    if not samples:
        raise ValueError("empty batch")
    ctx = samples[0].ctx
    T = ctx.T
    if masks is not None:
        samples = [s.restrict(np.flatnonzero(m)) for s, m in zip(samples, masks)]
    B = len(samples)
    N = max(s.n_candidates for s in samples)
    if N == 0:
        raise ValueError("sample without candidates")
    tgt_keys: dict[tuple[int, int], int] = {}
    stn_keys: dict[tuple[int, int], int] = {}
    tgt_idx = np.empty(B, dtype=int)
    cand_idx = np.zeros((B, N), dtype=int)
    valid = np.zeros((B, N), dtype=bool)
    xlS = np.empty((B, TARGET_SPATIAL_DIM))
    xsS = np.zeros((B, N, STATION_SPATIAL_DIM))
    y = np.empty(B)
    for b, s in enumerate(samples):
        if s.ctx is not ctx:
            raise ValueError("samples in a batch must share one feature context")
        if s.n_candidates == 0:
            raise ValueError("sample without candidates")
        tgt_idx[b] = tgt_keys.setdefault((s.target_district, s.t), len(tgt_keys))
        n = s.n_candidates
        for j, sid in enumerate(s.cand_ids):
            cand_idx[b, j] = stn_keys.setdefault((int(sid), s.t), len(stn_keys))
        valid[b, :n] = True
        xlS[b] = s.target_static
        xsS[b, :n, :TARGET_SPATIAL_DIM] = ctx.station_static[s.cand_ids]
        xsS[b, :n, TARGET_SPATIAL_DIM:] = s.cand_geo
        y[b] = s.truth_norm
    xlT = np.stack([ctx.district_meteo[d, t - T + 1:t + 1] for d, t in tgt_keys])
    xsT = np.stack([ctx.station_temporal[sid, t - T + 1:t + 1] for sid, t in stn_keys])
    return Batch(xlS, xlT, tgt_idx, xsS, xsT, cand_idx, valid, y)


# ---------------------------------------------------------------- forward / backward

def _encode(p: Params, cfg: AqrConfig, batch: Batch):
    tsp = Dense(p["tsp.W"], p["tsp.b"], "relu")
    ssp = Dense(p["ssp.W"], p["ssp.b"], "relu")
    thy = Dense(p["thy.W"], p["thy.b"], cfg.hybrid_activation)
    shy = Dense(p["shy.W"], p["shy.b"], cfg.hybrid_activation)
    h_lS = dense_forward(tsp, batch.xlS)
    h_sS = dense_forward(ssp, batch.xsS)
    h_lT_u, tcache = lstm_forward(_stack(p, "tlstm", cfg.lstm_layers), batch.xlT)
    h_sT_u, scache = lstm_forward(_stack(p, "slstm", cfg.lstm_layers), batch.xsT)
    in_l = np.concatenate([h_lS, h_lT_u[batch.tgt_idx]], axis=1)
    in_s = np.concatenate([h_sS, h_sT_u[batch.cand_idx]], axis=2)
    z_l = dense_forward(thy, in_l)
    z_s = dense_forward(shy, in_s)
    cache = dict(tsp=tsp, ssp=ssp, thy=thy, shy=shy, tcache=tcache, scache=scache,
                 in_l=in_l, in_s=in_s, n_t=len(h_lT_u), n_s=len(h_sT_u))
    return z_l, z_s, cache


def encode_batch(params: AqrParams, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Hybrid representations ``z_l`` (B, Z) and ``z_s`` (B, N, Z), no dropout."""
    z_l, z_s, _ = _encode(params.arrays, params.config, batch)
    return z_l, z_s


def head_forward(params: AqrParams, z_l, z_s, mask):
    """Attention pooling and output MLP on precomputed representations."""
    p = params.arrays
    a, pooled, _ = attention_forward(_att(p), z_l, z_s, mask)
    u = dense_forward(Dense(p["out.W"], p["out.b"], "relu"), np.concatenate([z_l, pooled], 1))
    y = dense_forward(Dense(p["head.W"], p["head.b"]), u)[:, 0]
    return y, a


def forward(params: AqrParams, batch: Batch, training: bool = False,
            rng: np.random.Generator | None = None):
    """Normalized predictions (B,), attention weights (B, N) and a backward cache."""
    p, cfg = params.arrays, params.config
    z_l, z_s, cache = _encode(p, cfg, batch)
    rate = cfg.dropout if training else 0.0
    if rate > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    m_l = dropout_mask(z_l.shape, rate, rng)
    m_s = dropout_mask(z_s.shape, rate, rng)
    zl_d, zs_d = z_l * m_l, z_s * m_s
    att = _att(p)
    a, pooled, acache = attention_forward(att, zl_d, zs_d, batch.valid)
    out = Dense(p["out.W"], p["out.b"], "relu")
    head = Dense(p["head.W"], p["head.b"])
    o_in = np.concatenate([zl_d, pooled], axis=1)
    u = dense_forward(out, o_in)
    m_u = dropout_mask(u.shape, rate, rng)
    ud = u * m_u
    y = dense_forward(head, ud)[:, 0]
    cache.update(att=att, acache=acache, out=out, head=head, o_in=o_in, ud=ud,
                 m_l=m_l, m_s=m_s, m_u=m_u, z_dim=z_l.shape[1])
    return y, a, cache


def backward(params: AqrParams, batch: Batch, cache: dict, dy) -> Params:
    """Gradients of ``sum(dy * y)`` w.r.t. every AQR array."""
    cfg = params.config
    g: Params = {}
    dud, g["head.W"], g["head.b"] = dense_backward(cache["head"], cache["ud"], dy[:, None])
    do_in, g["out.W"], g["out.b"] = dense_backward(cache["out"], cache["o_in"], dud * cache["m_u"])
    Z = cache["z_dim"]
    dzl_d = do_in[:, :Z]
    dzl_att, dzs_d, ag = attention_backward(cache["att"], cache["acache"], do_in[:, Z:])
    for k, v in ag.items():
        g[f"att.{k}"] = v
    dz_l = (dzl_d + dzl_att) * cache["m_l"]
    dz_s = dzs_d * cache["m_s"]
    din_l, g["thy.W"], g["thy.b"] = dense_backward(cache["thy"], cache["in_l"], dz_l)
    din_s, g["shy.W"], g["shy.b"] = dense_backward(cache["shy"], cache["in_s"], dz_s)
    S_t = cache["tsp"].W.shape[0]
    S_s = cache["ssp"].W.shape[0]
    _, g["tsp.W"], g["tsp.b"] = dense_backward(cache["tsp"], batch.xlS, din_l[:, :S_t])
    _, g["ssp.W"], g["ssp.b"] = dense_backward(cache["ssp"], batch.xsS, din_s[..., :S_s])
    H = cfg.lstm_hidden
    dh_t = np.zeros((cache["n_t"], H))
    np.add.at(dh_t, batch.tgt_idx, din_l[:, S_t:])
    dh_s = np.zeros((cache["n_s"], H))
    np.add.at(dh_s, batch.cand_idx[batch.valid], din_s[..., S_s:][batch.valid])
    p = params.arrays
    for prefix, c, dh in (("tlstm", cache["tcache"], dh_t), ("slstm", cache["scache"], dh_s)):
        _, lg = lstm_backward(_stack(p, prefix, cfg.lstm_layers), c, dh)
        for i, (dW, db) in enumerate(lg):
            g[f"{prefix}.{i}.W"] = dW
            g[f"{prefix}.{i}.b"] = db
    return g


def loss(y, truth):
    """Squared error."""
    return (np.asarray(y, dtype=float) - np.asarray(truth, dtype=float)) ** 2


def batch_loss_and_grads(params: AqrParams, batch: Batch, training: bool = False,
                         rng: np.random.Generator | None = None):
    y, _, cache = forward(params, batch, training, rng)
    B = batch.size
    mean = float(np.mean(loss(y, batch.y)))
    grads = backward(params, batch, cache, 2.0 * (y - batch.y) / B)
    return mean, grads


def train_step(params: AqrParams, batch: Batch, optimizer, rng: np.random.Generator | None = None,
               training: bool = True) -> float:
    """One optimizer step on mean batch MSE (in place); returns the pre-step loss."""
    mean, grads = batch_loss_and_grads(params, batch, training, rng)
    if not np.isfinite(mean) or not all_finite(grads):
        raise NumericError(f"non-finite AQR loss/gradient (loss={mean})")
    optimizer.step(params.arrays, grads)
    return mean


# ---------------------------------------------------------------- single-sample API

@dataclass
class Prediction:
    y: float                        # IAQI
    weights: np.ndarray             # attention weight per selected station
    selected: np.ndarray            # candidate positions, in the order given
    z_l: np.ndarray
    z_s: np.ndarray                 # (N, Z) for every candidate of the sample


def encode(sample: Sample, params: AqrParams):
    """``(z_l, [z_s_i])`` for the target and every candidate."""
    z_l, z_s = encode_batch(params, collate([sample]))
    return z_l[0], list(z_s[0])


def predict(sample: Sample, selected, params: AqrParams) -> Prediction:
    sel = np.asarray(list(selected), dtype=int)
    if sel.size == 0:
        raise ValueError("empty station selection")
    if sel.min() < 0 or sel.max() >= sample.n_candidates or len(set(sel.tolist())) != len(sel):
        raise ValueError("invalid selection indices")
    z_l, z_s = encode_batch(params, collate([sample]))
    y, a = head_forward(params, z_l, z_s[:, sel], None)
    y_raw = float(params.norm.invert("iaqi", [y[0]])[0]) if "iaqi" in params.norm.mean \
        else float(y[0])
    return Prediction(y_raw, a[0], sel, z_l[0], z_s[0])


def predict_batch(params: AqrParams, samples: Sequence[Sample], masks=None,
                  batch_size: int = 256) -> np.ndarray:
    """IAQI predictions for many samples (inference mode)."""
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        m = None if masks is None else masks[i:i + batch_size]
        y, _, _ = forward(params, collate(chunk, m))
        out.append(y)
    y = np.concatenate(out) if out else np.zeros(0)
    return params.norm.invert("iaqi", y)


# ---------------------------------------------------------------- checkpoint

def save_checkpoint(path, aqr: AqrParams, policy: Params | None = None,
                    extra: dict | None = None) -> Path:
    """Binary checkpoint: magic, manifest, float64 payload, trailer.

    Layout: ``MAGIC``, u64 manifest length, manifest JSON (name, shape,
    offset, group), little-endian float64 arrays, u64 trailer length,
    trailer JSON with normalization statistics and a config echo.
    """
    groups = [("aqr", aqr.arrays)] + ([("policy", policy)] if policy is not None else [])
    entries, chunks, offset = [], [], 0
    for group, arrays in groups:
        for name in sorted(arrays):
            a = np.asarray(arrays[name], dtype="<f8")
            entries.append({"group": group, "name": name, "shape": list(a.shape),
                            "offset": offset})
            chunks.append(a.tobytes())
            offset += a.nbytes
    manifest = json.dumps({"version": CHECKPOINT_VERSION, "arrays": entries},
                          sort_keys=True).encode()
    trailer = json.dumps({"norm": aqr.norm.to_dict(), "config": asdict(aqr.config),
                          "pollutant": aqr.pollutant, "extra": extra or {}},
                         sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)
        fh.write(struct.pack("<Q", len(trailer)))
        fh.write(trailer)
    return path


def load_checkpoint(path) -> tuple[AqrParams, Params | None, dict]:
    """Returns ``(aqr, policy_or_None, extra)``; validates every shape."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not an AIRRL checkpoint")
    pos = len(MAGIC)
    (mlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    manifest = json.loads(data[pos:pos + mlen])
    pos += mlen
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    total = sum(int(np.prod(e["shape"], dtype=int)) * 8 for e in manifest["arrays"])
    payload = data[pos:pos + total]
    if len(payload) != total:
        raise ValueError(f"{path}: truncated payload")
    pos += total
    (tlen,) = struct.unpack_from("<Q", data, pos)
    trailer = json.loads(data[pos + 8:pos + 8 + tlen])
    groups: dict[str, Params] = {}
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"], dtype=int))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"])
        groups.setdefault(e["group"], {})[e["name"]] = arr.reshape(e["shape"]).astype(float)
    names = {f.name for f in fields(AqrConfig)}
    cfg = AqrConfig(**{k: v for k, v in trailer["config"].items() if k in names})
    aqr = AqrParams(groups.get("aqr", {}), cfg, NormStats.from_dict(trailer["norm"]),
                    trailer.get("pollutant", "pm25"))
    return aqr, groups.get("policy"), trailer.get("extra", {})


__all__ = [
    "AqrConfig", "AqrParams", "Batch", "Prediction", "NumericError", "Adam",
    "collate", "encode", "encode_batch", "forward", "backward", "head_forward",
    "init_params", "zero_params", "loss", "predict", "predict_batch", "train_step",
    "batch_loss_and_grads", "save_checkpoint", "load_checkpoint",
]
