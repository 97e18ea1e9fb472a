"""Command-line driver: ``airrl <command> [flags]``.

Commands: gen-data, train, eval, baseline, sweep-k, infer, selftest.
Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numeric failure.
Settings resolve as command-line flag, then ``--config`` file (``key=value``
lines), then built-in default.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import quoteattr

import numpy as np

from . import __version__
from .baselines import BaselineSpec, aqr_k_sweep, baseline_predict, parse_k
from .evaluation import MetricsRow, metrics_row, write_metrics_report
from .experiments import pool_sigma
from .features import make_sample
from .regressor import CHECKPOINT_VERSION, MAGIC, AqrConfig, NumericError, load_checkpoint, predict_batch
from .selector import select_inference_batch, selection_rows, write_selection_csv
from .synthcity import SCHEMA_VERSION, CityConfig, ConfigError, emit_dataset, generate_city, load_dataset
from .training import (TrainConfig, TrainingDiverged, benchmark_config, predict_selected,
                       prepare_data, run_training)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("airrl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- settings

# flag dest -> (TrainConfig field or "aqr.<field>", type)
TRAIN_KEYS = {
    "pollutant": ("pollutant", str),
    "seed": ("seed", int),
    "t_window": ("aqr.T", int),
    "epochs": ("pretrain_epochs", int),
    "policy_epochs": ("policy_pretrain_epochs", int),
    "episodes": ("episodes", int),
    "patience": ("patience", int),
    "aqr_lr": ("aqr_lr", float),
    "policy_lr": ("policy_lr", float),
    "tau": ("tau", float),
    "batch_size": ("batch_size", int),
    "hour_stride": ("hour_stride", int),
    "reward_scale": ("reward_scale", float),
    "use_baseline": ("use_baseline", None),
    "optimizer": ("optimizer", str),
    "dropout": ("aqr.dropout", float),
}


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file; flags left unset are None."""
    merged = read_config_file(args.config) if getattr(args, "config", None) else {}
    for k, v in vars(args).items():
        if v is not None and k != "config":
            merged[k] = v
    return merged


def train_config(settings: dict) -> TrainConfig:
    preset = settings.get("preset", "full")
    if preset not in ("full", "benchmark"):
        raise UsageError(f"unknown preset {preset!r}")
    cfg = benchmark_config() if preset == "benchmark" else TrainConfig()
    top, aqr = {}, {}
    for key, (target, kind) in TRAIN_KEYS.items():
        if settings.get(key) is None:
            continue
        raw = settings[key]
        value = _bool(raw) if kind is None else kind(raw)
        if target.startswith("aqr."):
            aqr[target[4:]] = value
        else:
            top[target] = value
    if aqr:
        top["aqr"] = replace(cfg.aqr, **aqr)
    return replace(cfg, **top)


def config_from_echo(echo: dict) -> TrainConfig:
    d = dict(echo)
    names = {f.name for f in fields(AqrConfig)}
    d["aqr"] = AqrConfig(**{k: v for k, v in d.get("aqr", {}).items() if k in names})
    keep = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in d.items() if k in keep})


# ---------------------------------------------------------------- selection map

def _star(cx: float, cy: float, r: float) -> str:
    pts = []
    for i in range(10):
        rad = r if i % 2 == 0 else r * 0.45
        ang = math.pi / 2 + i * math.pi / 5
        pts.append(f"{cx + rad * math.cos(ang):.2f},{cy - rad * math.sin(ang):.2f}")
    return " ".join(pts)


def export_selection_map(selections: Sequence[tuple], wind: tuple[float, float], out,
                         station_xy, target_xy, scale: float = 20.0) -> tuple[Path, Path]:
    """Selection CSV plus a small SVG map, written to ``<out>.csv`` and ``<out>.svg``.

    ``selections`` are rows from ``selector.selection_rows``; ``wind`` is
    ``(speed m/s, direction degrees the wind blows from)``; ``station_xy``
    maps station id to km coordinates.
    """
    rows = list(selections)
    if not rows:
        raise ValueError("no selections to export")
    out = Path(out)
    if out.suffix in (".csv", ".svg"):
        out = out.with_suffix("")
    csv_path = write_selection_csv(rows, out.with_suffix(".csv"))

    ids = [int(r[2]) for r in rows]
    pts = np.array([station_xy[i] for i in ids] + [list(target_xy)], dtype=float)
    lo, hi = pts.min(axis=0) - 2.0, pts.max(axis=0) + 2.0
    w, h = (hi - lo) * scale

    def px(xy):
        return (xy[0] - lo[0]) * scale, (hi[1] - xy[1]) * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
             f'viewBox="0 0 {w:.2f} {h:.2f}">',
             f'<rect width="{w:.2f}" height="{h:.2f}" fill="#fafafa"/>']
    for r, sid in zip(rows, ids):
        x, y = px(station_xy[sid])
        selected = int(r[6]) == 1
        fill = "#d62728" if selected else "#ffffff"
        parts.append(f'<circle class={quoteattr("selected" if selected else "unselected")} '
                     f'cx="{x:.2f}" cy="{y:.2f}" r="6" fill="{fill}" stroke="#333333" '
                     f'data-station="{sid}"/>')
    tx, ty = px(target_xy)
    parts.append(f'<polygon class="target" points="{_star(tx, ty, 10)}" fill="#ffbf00" '
                 f'stroke="#333333"/>')
    speed, direction = wind
    if speed > 0:
        to = np.radians(direction) + np.pi                  # the way the air moves
        length = 15 + 5 * speed
        x0, y0 = 30.0, 30.0
        x1 = x0 + length * math.sin(to)
        y1 = y0 - length * math.cos(to)
        parts.append(f'<g class="wind"><line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" '
                     f'y2="{y1:.2f}" stroke="#1f77b4" stroke-width="3"/>'
                     f'<circle cx="{x1:.2f}" cy="{y1:.2f}" r="4" fill="#1f77b4"/></g>')
    parts.append("</svg>")
    svg_path = out.with_suffix(".svg")
    svg_path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return csv_path, svg_path


# ---------------------------------------------------------------- commands

def cmd_gen_data(s: dict) -> int:
    cfg = CityConfig(seed=int(s.get("seed") or 0),
                     n_stations=int(s.get("stations") or 30),
                     n_hours=int(s.get("hours") or 2160),
                     n_sources=int(s.get("sources") if s.get("sources") is not None else 8),
                     wind_regime=s.get("wind_regime") or "windy",
                     missing_rate=float(s.get("missing_rate") or 0.0),
                     pollutant=s.get("pollutant") or "pm25")
    path = emit_dataset(generate_city(cfg), _out(s))
    print(f"wrote dataset to {path}")
    return EXIT_OK


def _out(s: dict) -> Path:
    if not s.get("out"):
        raise UsageError("--out is required")
    return Path(s["out"])


def _data(s: dict):
    if not s.get("data"):
        raise UsageError("--data is required")
    return load_dataset(s["data"])


def cmd_train(s: dict) -> int:
    dataset = _data(s)
    cfg = train_config(s)
    res = run_training(dataset, cfg, out_dir=_out(s))
    last = res.log_rows[-1]
    print(f"checkpoint {res.checkpoint}; final val RMSE {last[3]:.4f}")
    return EXIT_OK


def _load_model(s: dict):
    if not s.get("checkpoint"):
        raise UsageError("--checkpoint is required")
    aqr, theta, extra = load_checkpoint(s["checkpoint"])
    if theta is None:
        raise ValueError(f"{s['checkpoint']}: checkpoint has no selector policy")
    return aqr, theta, config_from_echo(extra.get("train_config", {}))


def cmd_eval(s: dict) -> int:
    dataset = _data(s)
    aqr, theta, cfg = _load_model(s)
    data = prepare_data(dataset, cfg)
    truth = [x.truth for x in data.test]
    pred, _ = predict_selected(aqr, theta, data.test)
    rows = [metrics_row("airrl", cfg.pollutant, truth, pred),
            metrics_row("aqr_joint_all", cfg.pollutant, truth, predict_batch(aqr, data.test))]
    csv_path, txt_path = write_metrics_report(rows, _out(s))
    print(txt_path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_baseline(s: dict) -> int:
    dataset = _data(s)
    cfg = train_config(s)
    method = s.get("method") or "linear"
    data = prepare_data(dataset, cfg)
    truth = np.array([x.truth for x in data.test])
    if method == "aqr_k":
        k = parse_k(s.get("k") or 5)
        entry = aqr_k_sweep(dataset, [k or "all"], cfg, data=data)[0]
        rows = [MetricsRow("aqr", cfg.pollutant, len(truth), entry.rmse, entry.accuracy, entry.label)]
    else:
        k = int(s["k"]) if s.get("k") is not None else (5 if method == "knn" else None)
        sigma = float(s["sigma"]) if s.get("sigma") is not None else pool_sigma(data)
        spec = BaselineSpec(method, k=k, sigma=sigma, normalize=_bool(s.get("normalize") or False))
        name = method + ("_norm" if spec.normalize else "")
        rows = [metrics_row(name, cfg.pollutant, truth, baseline_predict(data.test, spec),
                            str(k) if method == "knn" else "")]
    _, txt = write_metrics_report(rows, _out(s))
    print(txt.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_sweep(s: dict) -> int:
    dataset = _data(s)
    cfg = train_config(s)
    ks = [k.strip() for k in str(s.get("ks") or "3,5,10,all").split(",") if k.strip()]
    entries = aqr_k_sweep(dataset, ks, cfg)
    n = len(entries[0].predictions) if entries else 0
    rows = [MetricsRow("aqr", cfg.pollutant, n, e.rmse, e.accuracy, e.label) for e in entries]
    _, txt = write_metrics_report(rows, _out(s))
    print(txt.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_infer(s: dict) -> int:
    dataset = _data(s)
    aqr, theta, cfg = _load_model(s)
    for key in ("x", "y", "t"):
        if s.get(key) is None:
            raise UsageError(f"--{key} is required")
    data = prepare_data(dataset, cfg)
    sample = make_sample(data.ctx, (float(s["x"]), float(s["y"])), int(s["t"]),
                         data.split.train)
    mask, probs = select_inference_batch([sample], aqr, theta)
    n = sample.n_candidates
    keep = mask[0, :n]
    y = float(predict_batch(aqr, [sample], [keep])[0])
    out = _out(s)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "prediction.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_km", "y_km", "t", "pollutant", "iaqi", "n_selected"])
        w.writerow([repr(float(s["x"])), repr(float(s["y"])), int(s["t"]), cfg.pollutant,
                    repr(y), int(keep.sum())])
    rows = selection_rows(0, sample, probs[0, :n], keep.astype(int))
    xy = {i: dataset.stations[i] for i in range(dataset.n_stations)}
    export_selection_map(rows, sample.wind(), out / "selection", xy, sample.target_xy)
    print(f"IAQI {y:.2f} from {int(keep.sum())} of {n} stations; outputs in {out}")
    return EXIT_OK


def cmd_selftest(s: dict) -> int:
    from .selftest import run_all

    results = run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} {r.detail}")
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "sweep-k": cmd_sweep,
    "infer": cmd_infer,
    "selftest": cmd_selftest,
}


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--preset", choices=("full", "benchmark"),
                   help="full-size model (default) or the reduced single-CPU preset")
    p.add_argument("--pollutant", choices=("pm25", "pm10"))
    p.add_argument("--seed", type=int)
    p.add_argument("--t-window", type=int, help="hours of history per sample (default 24)")
    p.add_argument("--epochs", type=int, help="regressor pretraining epochs")
    p.add_argument("--policy-epochs", type=int, help="selector pretraining epochs")
    p.add_argument("--episodes", type=int, help="joint-training episode cap")
    p.add_argument("--patience", type=int)
    p.add_argument("--aqr-lr", type=float)
    p.add_argument("--policy-lr", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hour-stride", type=int)
    p.add_argument("--reward-scale", type=float)
    p.add_argument("--use-baseline", default=None, action="store_const", const=True)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--dropout", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="airrl", description="Air quality inference with station selection.")
    parser.add_argument("--version", action="version",
                        version=f"airrl {__version__} (dataset schema {SCHEMA_VERSION}, "
                                f"checkpoint {MAGIC!r} v{CHECKPOINT_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic city dataset")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--stations", type=int)
    g.add_argument("--hours", type=int)
    g.add_argument("--sources", type=int)
    g.add_argument("--wind-regime", choices=("windy", "calm", "mixed"))
    g.add_argument("--missing-rate", type=float)
    g.add_argument("--pollutant", choices=("pm25", "pm10"))
    g.add_argument("--config")

    t = sub.add_parser("train", help="train the regressor and the station selector")
    _train_flags(t)
    t.add_argument("--out", help="output directory for model.ckpt and train_log.csv")
    t.add_argument("--config")

    e = sub.add_parser("eval", help="score a checkpoint on the held-out stations")
    e.add_argument("--data")
    e.add_argument("--checkpoint")
    e.add_argument("--out", help="report path without extension")
    e.add_argument("--config")

    b = sub.add_parser("baseline", help="evaluate one comparison method")
    _train_flags(b)
    b.add_argument("--method", choices=("linear", "gaussian", "knn", "aqr_k"))
    b.add_argument("--k")
    b.add_argument("--sigma", type=float)
    b.add_argument("--normalize", default=None, action="store_const", const=True)
    b.add_argument("--out")
    b.add_argument("--config")

    k = sub.add_parser("sweep-k", help="train AQR on the k nearest stations for several k")
    _train_flags(k)
    k.add_argument("--ks", help="comma-separated values, e.g. 3,5,10,all")
    k.add_argument("--out")
    k.add_argument("--config")

    i = sub.add_parser("infer", help="predict one location and hour from a checkpoint")
    i.add_argument("--data")
    i.add_argument("--checkpoint")
    i.add_argument("--x", type=float)
    i.add_argument("--y", type=float)
    i.add_argument("--t", type=int)
    i.add_argument("--out")
    i.add_argument("--config")

    sub.add_parser("selftest", help="gradient checks and exact identities")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = resolve(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:             # --help / --version
        return int(exc.code or 0)
    except (NumericError, TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, ConfigError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
