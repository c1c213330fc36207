"""Command line entry point: ``patternlab {run,predict,compare,replay,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .sim import SimConfig


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--pattern", help="gateway_aggregation | gateway_offloading | pipes_and_filters | path to a topology config")
    p.add_argument("--offload", type=int, nargs="+", help="offload amounts for gateway_offloading (default 0 5 10)")
    p.add_argument("--variant", nargs="+", help="pipes_and_filters variants (default: all three)")
    p.add_argument("--overhead", type=float, help="gateway aggregator work units per request (default 0)")
    p.add_argument("--granularity", type=int)
    p.add_argument("--users", type=int)
    p.add_argument("--duration", type=float, help="simulated seconds per run")
    p.add_argument("--time-unit", type=float, help="seconds per work unit")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dist", choices=("exponential", "deterministic"))
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def config_from_args(args: argparse.Namespace) -> bench.ExperimentConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    sim = dict(data.pop("sim", {}))
    top = {"pattern": args.pattern, "offloads": args.offload, "variants": args.variant,
           "gateway_overhead": args.overhead, "granularity": args.granularity,
           "repetitions": args.reps, "workers": args.workers, "out": args.out}
    data.update({k: v for k, v in top.items() if v is not None})
    sim_flags = {"users": args.users, "duration": args.duration, "time_unit": args.time_unit,
                 "seed": args.seed, "service_time_dist": args.dist}
    sim.update({k: v for k, v in sim_flags.items() if v is not None})
    try:
        cfg = bench.ExperimentConfig.from_dict({**data, "sim": SimConfig(**sim)})
    except (TypeError, ValueError) as exc:
        raise bench.ConfigError(str(exc)) from exc
    return bench.apply_seed_override(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patternlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "simulate the sweep; writes runs.csv and summary.csv"),
                        ("predict", "solve the queueing model; writes theoretical.csv"),
                        ("report", "run + predict + compare")):
        _add_experiment_flags(sub.add_parser(name, help=help_))
    p = sub.add_parser("compare", help="compare theoretical.csv with summary.csv")
    p.add_argument("theoretical")
    p.add_argument("summary")
    p.add_argument("--out")
    p = sub.add_parser("replay", help="re-simulate a recorded run and verify its summary")
    p.add_argument("runs", help="runs.csv (or its directory)")
    p.add_argument("experiment_id")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            print(bench.run(config_from_args(args)) / "summary.csv")
        elif args.command == "predict":
            print(bench.predict(config_from_args(args)))
        elif args.command == "report":
            cfg = config_from_args(args)
            bench.report(cfg)
            print(Path(cfg.out) / "report.md")
        elif args.command == "compare":
            bench.compare(args.theoretical, args.summary, args.out)
            print(Path(args.out or Path(args.summary).parent) / "comparison.csv")
        elif args.command == "replay":
            res = bench.replay(args.runs, args.experiment_id)
            print(f"{args.experiment_id}: replay verified ({res.completed} requests)")
    except (bench.ConfigError, bench.ReplayMismatchError, KeyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
