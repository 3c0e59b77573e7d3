"""Command-line entry point.

Subcommands: generate, train, eval, ablate, crosseval, report. Outputs land
under a run directory (explicit --out or a timestamped directory below the
output root). Failures print a machine-readable JSON error to stderr and
exit nonzero (2 for configuration problems, 1 otherwise).

Environment: TURNWATCH_OUT sets the output root, TURNWATCH_THREADS the
torch CPU thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import ConfigurationError, TurnwatchError
from . import experiments as exp
from .training import load_checkpoint


def _add_config_args(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _resolve_out(args, command) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    root = os.environ.get("TURNWATCH_OUT", "runs")
    return exp.timestamped_run_dir(root, command)


def _make_config(args) -> exp.ExperimentConfig:
    return exp.make_config(args.config, args.set)


def cmd_generate(args) -> int:
    cfg = _make_config(args)
    out = Path(args.out) if args.out else _resolve_out(args, "dataset")
    out.mkdir(parents=True, exist_ok=True)
    meta = exp.generate_dataset(cfg, out)
    print(json.dumps({"dataset": str(out), **meta}, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = _make_config(args)
    out = _resolve_out(args, "train")
    log = None
    if not args.quiet:
        log = lambda row: print(
            "epoch {epoch}: total={total:.4f} kl={kl:.4f} recon={recon:.4f} "
            "val={val_total:.4f}".format(**row)
        )
    exp.run_training(args.dataset, cfg, out, log=log)
    print(json.dumps({"run": str(out), "checkpoint": str(out / "checkpoint.twck")}))
    return 0


def cmd_eval(args) -> int:
    cfg = _make_config(args)
    run_dir = Path(args.run)
    state = load_checkpoint(run_dir / "checkpoint.twck")
    sequences = exp.load_split_sequences(args.dataset, run_dir, args.split, cfg)
    run = exp.evaluate_checkpoint(
        state,
        sequences,
        n_samples=args.n_samples or state.train_config.n_samples,
        repeats=args.repeats or state.train_config.eval_repeats,
        seed=cfg.eval_seed,
        keep_ensembles=cfg.keep_ensembles,
    )
    exp.write_eval_artifacts(run_dir / "eval", run)
    print(json.dumps({"run": str(run_dir), **{
        k: v for k, v in run.metric_summary().items()
    }}, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    cfg = _make_config(args)
    out = _resolve_out(args, "ablate")
    log = None if args.quiet else (lambda row: print("  epoch", row["epoch"], flush=True))
    grid = exp.run_ablation(args.dataset, cfg, out, log=log)
    failures = [c for c, e in grid.items() if e["status"] != "ok"]
    print(json.dumps({"run": str(out), "cells": len(grid), "failed": failures}))
    return 0


def cmd_crosseval(args) -> int:
    cfg = _make_config(args)
    state = load_checkpoint(args.checkpoint)
    sequences, _, _ = exp.load_dataset(args.dataset)
    run = exp.cross_eval(
        state,
        sequences,
        resize=not args.no_resize,
        mirror=args.mirror,
        n_samples=args.n_samples or state.train_config.n_samples,
        repeats=args.repeats or 1,
        seed=cfg.eval_seed,
    )
    out = _resolve_out(args, "crosseval")
    out.mkdir(parents=True, exist_ok=True)
    exp.write_eval_artifacts(out / "eval", run)
    print(json.dumps({"run": str(out), **run.metric_summary()}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    report = exp.write_report(args.run, plots=args.plots)
    print(json.dumps({"report": str(report)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turnwatch",
        description="vehicle-VRU interaction detection on synthetic turning sequences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a balanced synthetic dataset")
    _add_config_args(p)
    p.add_argument("--out", help="dataset directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on a dataset")
    _add_config_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sampled evaluation of a training run")
    _add_config_args(p)
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--n-samples", type=int, default=0)
    p.add_argument("--repeats", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the model-matrix grid")
    _add_config_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("crosseval", help="evaluate a checkpoint on foreign data")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--mirror", action="store_true", help="flip travel direction")
    p.add_argument("--no-resize", action="store_true")
    p.add_argument("--n-samples", type=int, default=0)
    p.add_argument("--repeats", type=int, default=0)
    p.set_defaults(func=cmd_crosseval)

    p = sub.add_parser("report", help="render report views of a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("TURNWATCH_THREADS")
    if threads:
        import torch

        torch.set_num_threads(int(threads))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TurnwatchError as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(payload), file=sys.stderr)
        return 2 if isinstance(exc, ConfigurationError) else 1
    except FileNotFoundError as exc:
        print(
            json.dumps({"error": {"type": "FileNotFoundError", "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
