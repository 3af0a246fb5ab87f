"""Command-line entry point: ``svcforecast {simulate,train,predict,eval,sweep}``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_run_config, load_run_config
from .data import make_supervised, parse_trace, split, split_counts, standardize, unstandardize, window_events, write_calls_csv, write_metrics_csv
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateGraphError,
    DimensionError,
    DivergenceError,
    EvaluationError,
    InputError,
    UsageError,
)
from .evaluation import (
    PUBLISHED_REFERENCE,
    concurrency_sweep,
    evaluate,
    evaluate_persistence,
    predict,
    sweep_report,
    window_sweep,
    write_json,
    write_sweep_csv,
)
from .simgen import get_band, run as run_sim
from .train import train_loop

log = logging.getLogger("svcforecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
CONFIG_ECHO = "effective_config.txt"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _set_pair(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="seed for every random stream (u64)")
    common.add_argument("--out", help="output directory (created if missing)")
    common.add_argument("--set", dest="overrides", action="append", type=_set_pair, default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    trace = argparse.ArgumentParser(add_help=False)
    trace.add_argument("--metrics", help="metrics CSV (overrides metrics_path)")
    trace.add_argument("--calls", help="calls CSV (overrides calls_path)")

    p = _Parser(prog="svcforecast", description="Service response-time forecasting on call graphs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="write a synthetic trace (metrics.csv, calls.csv)")

    t = sub.add_parser("train", parents=[common, trace], help="train on a trace; writes checkpoint.ckpt and history.csv")
    t.add_argument("--timing", action="store_true", help="fill the seconds column of history.csv")

    pr = sub.add_parser("predict", parents=[common, trace], help="forecast response time in ms; writes predictions.csv")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--horizon", type=int, help="must match the horizon the checkpoint was trained for")

    e = sub.add_parser("eval", parents=[common, trace], help="score a checkpoint on the test split; writes metrics.json")
    e.add_argument("--checkpoint", required=True)

    s = sub.add_parser("sweep", parents=[common, trace], help="window or concurrency sweep; writes a CSV and report.json")
    s.add_argument("--kind", required=True, choices=("window", "concurrency"))
    s.add_argument("--windows", help="window sizes in minutes, e.g. 5,10,30 (window sweep)")
    s.add_argument("--bands", help="band names, e.g. Low,Extreme (concurrency sweep)")
    return p


def _run_config(args) -> RunConfig:
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    for flag, key in (("metrics", "metrics_path"), ("calls", "calls_path"), ("windows", "sweep_windows_min"), ("bands", "sweep_bands")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_run_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(dump_run_config(cfg), encoding="utf-8")
    return out


def _load_trace(cfg: RunConfig):
    if not cfg.metrics_path:
        raise UsageError("no trace given; pass --metrics (and --calls) or set metrics_path")
    try:
        return parse_trace(cfg.metrics_path, cfg.calls_path or None)
    except OSError as exc:
        raise DataError(f"cannot read trace: {exc}") from None


def _sequence(cfg: RunConfig, window_len_s: int, horizon: int):
    events, calls = _load_trace(cfg)
    if not events:
        raise DataError("trace has no metric rows")
    return make_supervised(window_events(events, calls, window_len_s), horizon, window_len_s)


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    sim = run_sim(cfg.sim_config())
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        write_metrics_csv(sim.events, fh)
    with open(out / "calls.csv", "w", encoding="utf-8", newline="") as fh:
        write_calls_csv(sim.calls, fh)
    print(f"wrote {len(sim.events)} metric rows and {len(sim.calls)} call rows to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, timing: bool = False) -> int:
    seq = _sequence(cfg, cfg.window_len_s, cfg.horizon_steps)
    out = _out_dir(cfg)
    tr, va, te = split(seq, cfg.train_frac, cfg.val_frac)
    mcfg = cfg.model_config()
    params, history = train_loop(tr, va, mcfg, cfg.train_config())
    meta = {
        "window_len_s": cfg.window_len_s,
        "horizon_steps": cfg.horizon_steps,
        "train_frac": cfg.train_frac,
        "val_frac": cfg.val_frac,
        "vocabulary": list(seq.vocabulary),
    }
    save_checkpoint(out / "checkpoint.ckpt", params, mcfg, tr.feature_stats, meta)
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        history.write_csv(fh, timing=timing)
    best = min(history.val_losses) if len(history) else float("nan")
    print(f"trained {len(history)} epochs, best val loss {best:.6g}; checkpoint in {out}")
    return EXIT_OK


def _checkpoint_sequence(cfg: RunConfig, ckpt, horizon: int | None = None):
    window = int(ckpt.meta.get("window_len_s", cfg.window_len_s))
    trained = int(ckpt.meta.get("horizon_steps", cfg.horizon_steps))
    if horizon is not None and horizon != trained:
        raise UsageError(f"checkpoint was trained for horizon {trained}, got --horizon {horizon}")
    return standardize(_sequence(cfg, window, trained), ckpt.stats)


def cmd_predict(cfg: RunConfig, checkpoint: str, horizon: int | None = None) -> int:
    ckpt = load_checkpoint(checkpoint)
    seq = _checkpoint_sequence(cfg, ckpt, horizon)
    out = _out_dir(cfg)
    pred_ms = unstandardize(predict(ckpt.params, ckpt.config, seq), ckpt.stats)
    dt = seq.horizon_steps
    rows = 0
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "service_id", "predicted_response_time_ms"])
        for t in range(seq.num_windows):
            for i in np.flatnonzero(seq.presence[t]):
                w.writerow([t + dt, seq.vocabulary[i], repr(float(pred_ms[t, i]))])
                rows += 1
    print(f"wrote {rows} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    ckpt = load_checkpoint(checkpoint)
    seq = _checkpoint_sequence(cfg, ckpt)
    T = seq.num_windows
    n_train, n_val, _ = split_counts(T, ckpt.meta.get("train_frac", cfg.train_frac), ckpt.meta.get("val_frac", cfg.val_frac))
    lo = n_train + n_val
    test = seq.with_range(lo, T)
    if not test.supervised_windows:
        raise DataError(f"test portion of {T} windows has no supervised windows")
    model = evaluate(ckpt.params, ckpt.config, test)
    base = evaluate_persistence(test)
    out = _out_dir(cfg)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        write_json(
            {
                "model": asdict(model),
                "persistence": asdict(base),
                "test_windows": [lo, T],
                "units": "standardized response time",
                "published_reference": PUBLISHED_REFERENCE,
            },
            fh,
        )
    print(f"test MAE {model.mae:.4f} RMSE {model.rmse:.4f} R2 {model.r2:.4f} (persistence MAE {base.mae:.4f})")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, kind: str) -> int:
    mcfg, tcfg = cfg.model_config(), cfg.train_config()
    if kind == "window":
        if cfg.metrics_path:
            events, calls = _load_trace(cfg)
        else:
            sim = run_sim(cfg.sim_config())
            events, calls = sim.events, sim.calls
        rows = window_sweep(events, calls, list(cfg.sweep_windows_min), mcfg, tcfg, cfg.horizon_steps, cfg.train_frac, cfg.val_frac)
        key_name = "window_min"
    elif kind == "concurrency":
        bands = [get_band(name) for name in cfg.sweep_bands]
        rows = concurrency_sweep(cfg.sim_config(), mcfg, tcfg, cfg.window_len_s, bands, cfg.horizon_steps,
                                 cfg.train_frac, cfg.val_frac, seed=cfg.seed)
        key_name = "band"
    else:
        raise UsageError(f"unknown sweep kind {kind!r}; expected window or concurrency")
    out = _out_dir(cfg)
    with open(out / f"{kind}_sweep.csv", "w", encoding="utf-8", newline="") as fh:
        write_sweep_csv(rows, key_name, fh)
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items() if k != "load_profile"}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        write_json(sweep_report(kind, rows, config), fh)
    for r in rows:
        print(f"{r.key}: " + (f"MAE {r.mae:.4f} RMSE {r.rmse:.4f} R2 {r.r2:.4f}" if r.ok else f"skipped ({r.skipped})"))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.timing)
        if args.command == "predict":
            return cmd_predict(cfg, args.checkpoint, args.horizon)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        return cmd_sweep(cfg, args.kind)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, EvaluationError, DegenerateGraphError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
