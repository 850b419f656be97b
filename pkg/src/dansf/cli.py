"""Command line entry point: ``dansf {run,sweep,plot,verify}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import DansfError, InvalidConfig, InvalidGraph, IterationAbort
from .experiment import ExperimentConfig, run_experiment, sweep_topologies, write_atomic
from .plot import PlotParseError, plot

EXIT_SOLVER = 1
EXIT_IO = 2
EXIT_USAGE = 64


def load_config(args):
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    overrides = list(getattr(args, "set", None) or [])
    for flag, key in (("seed", "master_seed"), ("out", "out"), ("mode", "mode"), ("runs", "mc_runs"),
                      ("topology_file", "topology_file")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}" if not isinstance(value, str) else f'{key}="{value}"')
    if getattr(args, "topology_file", None):
        overrides.append('topology="file"')
    return cfg.with_overrides(overrides)


def _experiment_args(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=("exact", "sampled"))
    p.add_argument("--runs", type=int, help="Monte-Carlo runs")
    p.add_argument("--topology-file", dest="topology_file", help="edge-list file (first line K, then 'k l' pairs)")


def build_parser():
    parser = argparse.ArgumentParser(prog="dansf", description="Distributed node-specific signal fusion simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _experiment_args(sub.add_parser("run", help="Monte-Carlo runs on one topology"))
    _experiment_args(sub.add_parser("sweep", help="compare fully connected, random and line topologies"))
    p = sub.add_parser("plot", help="render summary CSVs to an SVG")
    p.add_argument("summaries", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--title", default="")
    p = sub.add_parser("verify", help="run the invariant and convergence gates")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--quick", action="store_true", help="fewer runs, skip the sampled-statistics gate")
    return parser


def _verify(args):
    from .verify import run_all

    runs = 4 if args.quick else args.runs
    results = run_all(runs=runs, monotone_runs=min(runs, 10), jobs=args.jobs, include_sampled=not args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else EXIT_SOLVER


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            write_atomic(args.output, plot(args.summaries, title=args.title))
            return 0
        if args.command == "verify":
            return _verify(args)
        cfg = load_config(args)
        if args.command == "run":
            paths = run_experiment(cfg, jobs=args.jobs)
            for key, path in paths.items():
                print(f"{key}: {path}")
        else:
            paths, medians = sweep_topologies(cfg, jobs=args.jobs)
            for topo, m in medians.items():
                print(f"{topo}: median iterations to {cfg.iteration_threshold:g} = {m}")
            print(f"comparison: {paths['comparison']}")
        return 0
    except (InvalidConfig, InvalidGraph, PlotParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IterationAbort as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DansfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
