"""Topology sweep at the reference setting (K=10, Q=3, M_k=7, trace objective).

Writes raw/summary CSVs, comparison.csv and sweep.svg to --out, then prints the
median iterations-to-threshold per topology.

    python scripts/reproduce_topology_sweep.py --out results/sweep --jobs 4
"""
import argparse
import logging

import numpy as np

from dansf.experiment import ExperimentConfig, sweep_topologies


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/sweep")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--mode", default="exact", choices=("exact", "sampled"))
    ap.add_argument("--N", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig(K=10, Q=3, M=7, problem="trace_qclp", mode=args.mode, N=args.N,
                           mc_runs=args.runs, max_iterations=args.iterations,
                           master_seed=args.seed, out=args.out)
    paths, medians = sweep_topologies(cfg, jobs=args.jobs)
    for topo, m in medians.items():
        print(f"{topo:16s} median iterations to 1e-4: {'not reached' if np.isinf(m) else m}")
    print(f"plot: {paths['plot']}")


if __name__ == "__main__":
    main()
