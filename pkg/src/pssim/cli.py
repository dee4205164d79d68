"""Command-line front end.

pssim run --algo asgd --barrier throttled:k=4 --workers 8 --partitions 32 \
          --rate 0.05 --step 0.1 --iters 2000 --delay cds:w=0,i=1.0 \
          --clock virtual --data synth:4096,64,5 --out results/

Repeatable flags (--algo/--barrier/--delay) span an experiment matrix; every
cell writes metrics.csv under the output directory and summary.csv compares
them.  A JSON config file given with --config overrides the flags.
"""

from __future__ import annotations

import argparse
import sys

from .engine import DeadlockError, DivergenceError
from .experiments import (ExperimentConfig, apply_config_file, run_matrix,
                          write_outputs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pssim",
        description="simulated asynchronous parameter-server experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment matrix")
    p.add_argument("--algo", action="append", default=None,
                   help="sgd | asgd | saga | asaga (repeatable, or comma separated)")
    p.add_argument("--barrier", action="append", default=None,
                   help="bsp | asp | ssp:s=<int> | throttled:k=<int> (repeatable)")
    p.add_argument("--delay", action="append", default=None,
                   help="none | cds:w=<id>,i=<float> | pcs:seed=<int> (repeatable)")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--partitions", type=int, default=8)
    p.add_argument("--rate", type=float, default=0.1, help="minibatch sampling rate")
    p.add_argument("--step", type=float, default=0.1, help="synchronous step size")
    p.add_argument("--iters", type=int, default=100, help="server updates per run")
    p.add_argument("--clock", choices=("virtual", "wall"), default="virtual")
    p.add_argument("--data", required=True,
                   help="LIBSVM path or synth:n,d,seed[,noise]")
    p.add_argument("--out", default="out")
    p.add_argument("--seeds", default="1,2,3",
                   help="comma separated repetition seeds")
    p.add_argument("--schedule", choices=("inverse_sqrt", "fixed"),
                   default="inverse_sqrt")
    p.add_argument("--saga-mode", choices=("canonical", "eager_average"),
                   default="canonical")
    p.add_argument("--no-step-heuristic", action="store_true",
                   help="do not divide the async step size by the worker count")
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--target-error", type=float, default=None,
                   help="error level for time-to-target and speedup columns")
    p.add_argument("--stop-error", type=float, default=None,
                   help="stop a run early once the evaluated error falls below this")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="+- fraction of seeded task duration jitter (virtual clock)")
    p.add_argument("--data-seed", type=int, default=0,
                   help="seed for the partition shuffle")
    p.add_argument("--config", default=None,
                   help="JSON file whose keys override these flags")
    return parser


def _split_simple(values, default):
    """Comma-split plain lists; specs with ':' keep their commas."""
    if not values:
        return default
    out = []
    for v in values:
        if ":" in v:
            out.append(v)
        else:
            out.extend(x.strip() for x in v.split(",") if x.strip())
    return tuple(out)


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig(
        data=args.data,
        algos=_split_simple(args.algo, ("sgd",)),
        barriers=tuple(args.barrier) if args.barrier else ("bsp",),
        delays=tuple(args.delay) if args.delay else ("none",),
        workers=args.workers,
        partitions=args.partitions,
        rate=args.rate,
        step=args.step,
        iterations=args.iters,
        clock=args.clock,
        out=args.out,
        seeds=tuple(int(s) for s in args.seeds.split(",") if s),
        schedule=args.schedule,
        saga_mode=args.saga_mode,
        step_heuristic=not args.no_step_heuristic,
        eval_every=args.eval_every,
        target_error=args.target_error,
        stop_error=args.stop_error,
        duration_jitter=args.jitter,
        data_seed=args.data_seed,
    )
    if args.config:
        cfg = apply_config_file(cfg, args.config)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args).validate()
    except (ValueError, OSError) as exc:
        print(f"pssim: bad configuration: {exc}", file=sys.stderr)
        return 2
    try:
        cells, baseline = run_matrix(cfg)
    except (DeadlockError, DivergenceError) as exc:
        print(f"pssim: run failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        # dataset loading and late config checks surface here
        print(f"pssim: bad configuration: {exc}", file=sys.stderr)
        return 2
    summary = write_outputs(cfg, cells)
    print(f"baseline objective: {baseline:.9g}")
    for cell in cells:
        tt = cell.mean_time_to_target()
        tt_txt = f" time-to-target {tt:.6g}" if tt is not None else ""
        print(f"{cell.label()}: final error {cell.mean_final_error():.6g}"
              f" mean wait {cell.mean_wait():.6g}{tt_txt}")
    print(f"wrote {summary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
