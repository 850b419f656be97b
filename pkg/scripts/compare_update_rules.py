"""Shared vs node-specific compressor update on each topology.

The node-specific rule folds F_kq into every compressor on the updating branch.
On a fully connected graph both rules coincide; on deeper trees the
node-specific one stalls or aborts.  Prints the final median max-node MSE.
"""
import argparse

from dansf.errors import IterationAbort
from dansf.experiment import ExperimentConfig, simulate_many, worst_curves
from dansf.metrics import mc_aggregate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    print(f"{'topology':16s} {'shared':>12s} {'node_specific':>14s}")
    for topo in ("fully_connected", "erdos_renyi", "line"):
        finals = []
        for rule in ("shared", "node_specific"):
            cfg = ExperimentConfig(K=10, Q=3, M=7, topology=topo, mode="exact", mc_runs=args.runs,
                                   max_iterations=args.iterations, master_seed=args.seed,
                                   compressor_update=rule)
            try:
                s = mc_aggregate(worst_curves(simulate_many(cfg, jobs=args.jobs)))
            except IterationAbort as exc:
                # degenerate compressors eventually make the local covariance singular
                finals.append(f"abort@{exc.iteration}")
                continue
            finals.append(f"{s.median[-1]:.3e}" if len(s.median) else "nan")
        print(f"{topo:16s} {finals[0]:>12s} {finals[1]:>14s}")


if __name__ == "__main__":
    main()
