"""Correctness and convergence gates, runnable from the CLI and from pytest.

Each ``check_*`` function returns a :class:`CheckResult`; thresholds are
module constants so the test-suite and ``dansf verify`` use identical gates.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracles
from .engine import CompressedBlock, fuse_forward
from .experiment import ExperimentConfig, run_experiment, simulate_many, worst_curves
from .metrics import ConvergenceCurve, check_monotone, iterations_to_threshold, mc_aggregate, median_iterations
from .network import NetworkGraph, gather_schedule, prune_to_tree
from .problems import ProblemData, lcmv_solve, make_coupled_family, mmse_solve, trace_qclp_solve, verify_coupling
from .signals import ChannelLayout, random_mixture

ORACLE_TOL = 1e-7
COUPLING_TOL = 1e-9
MONOTONE_REL_TOL = 1e-9
FEAS_TOL = 1e-8
CONVERGENCE_MSE = 1e-6
CONVERGENCE_ITERS = 300
ORDERING_THRESHOLD = 1e-4
ORDERING_ITERS = 600
SAMPLED_MSE = 1e-2
SAMPLED_N = 10_000
LIFT_TOL = 1e-12

REFERENCE_SETTING = dict(K=10, Q=3, M=7, problem="trace_qclp")
TOPOLOGIES = ("fully_connected", "erdos_renyi", "line")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _spd(rng, m):
    A = rng.normal(size=(m, m))
    return A @ A.T + m * 0.1 * np.eye(m)


def check_oracle_equivalence(instances=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = {"trace_qclp": 0.0, "mmse": 0.0, "lcmv": 0.0}
    for _ in range(instances):
        m = int(rng.integers(2, 13))
        Q = int(rng.integers(1, min(m, 4) + 1))
        R = _spd(rng, m)
        B = rng.normal(size=(m, Q))
        X = trace_qclp_solve(ProblemData(R, B=B))
        worst["trace_qclp"] = max(worst["trace_qclp"], _rel(X, oracles.projected_gradient_trace_qclp(R, B)))
        R_yd = rng.normal(size=(m, Q))
        X = mmse_solve(ProblemData(R, R_yd=R_yd))
        worst["mmse"] = max(worst["mmse"], _rel(X, oracles.lstsq_mmse(R, R_yd)))
        L = int(rng.integers(1, m))
        Bl = rng.normal(size=(m, L))
        H = rng.normal(size=(Q, L))
        X = lcmv_solve(ProblemData(R, B=Bl, H=H))
        worst["lcmv"] = max(worst["lcmv"], _rel(X, oracles.kkt_lcmv(R, Bl, H)))
    ok = all(v <= ORACLE_TOL for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (tol {ORACLE_TOL:g})"
    return CheckResult("1 oracle equivalence", ok, detail)


def check_coupling(seed=0):
    layout = ChannelLayout.uniform(REFERENCE_SETTING["K"], REFERENCE_SETTING["M"])
    Q = REFERENCE_SETTING["Q"]
    worst = {}
    for kind in ("trace_qclp", "mmse", "lcmv"):
        model = random_mixture(layout, Q, seed)
        fam = make_coupled_family(kind, layout.num_nodes, Q, layout, model, seed + 1)
        worst[kind] = verify_coupling(fam, COUPLING_TOL).max_deviation
    ok = all(v <= COUPLING_TOL for v in worst.values())
    return CheckResult("2 coupled-family consistency", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def reference_config(**overrides):
    base = dict(REFERENCE_SETTING, mode="exact", master_seed=2024, out="unused")
    base.update(overrides)
    return ExperimentConfig(**base)


def exact_records(runs=20, jobs=1, iterations=ORDERING_ITERS, mode="exact", N=SAMPLED_N):
    """Records of the reference configuration on every topology."""
    cfg = reference_config(mc_runs=runs, max_iterations=iterations, mode=mode, N=N)
    return {topo: simulate_many(cfg, topology=topo, jobs=jobs) for topo in TOPOLOGIES}


def check_monotone_feasible(records=None, runs=10, jobs=1, iterations=CONVERGENCE_ITERS):
    """Monotone per-node cost and feasibility over the first ``runs`` runs.

    ``records`` may come from a longer :func:`exact_records` call with the
    same seeds; it is truncated to ``runs`` runs of ``iterations`` steps.
    """
    if records is None:
        records = exact_records(runs, jobs, iterations)
    mono, feas, local = 0, 0.0, 0.0
    for topo in TOPOLOGIES:
        for recs in records[topo][:runs]:
            recs = recs[:iterations]
            mono += len(check_monotone(ConvergenceCurve.from_records(recs, "cost"), MONOTONE_REL_TOL))
            feas = max(feas, max(r.feasibility.max() for r in recs))
            local = max(local, max(r.local_feasibility for r in recs))
    ok = mono == 0 and feas <= FEAS_TOL and local <= FEAS_TOL
    return CheckResult(
        "3 monotone cost and feasibility",
        ok,
        f"{mono} monotonicity violations, worst feasibility residual {feas:.1e} (local {local:.1e})",
    )


def convergence_runs(runs=20, jobs=1, iterations=ORDERING_ITERS, mode="exact", N=SAMPLED_N, records=None):
    if records is None:
        records = exact_records(runs, jobs, iterations, mode, N)
    return {topo: worst_curves(recs) for topo, recs in records.items()}


def check_convergence(curves, limit=CONVERGENCE_MSE, iterations=CONVERGENCE_ITERS, name="4 convergence (exact)"):
    reached = {}
    for topo, runs in curves.items():
        med = mc_aggregate([c[:iterations] for c in runs]).median
        reached[topo] = float(med.min())
    ok = all(v <= limit for v in reached.values())
    detail = ", ".join(f"{t} {v:.1e}" for t, v in reached.items()) + f" (need <= {limit:g} within {iterations} it.)"
    return CheckResult(name, ok, detail)


def check_ordering(curves, threshold=ORDERING_THRESHOLD):
    med = {
        topo: median_iterations([iterations_to_threshold(c, threshold, offset=1) for c in runs])
        for topo, runs in curves.items()
    }
    fc, er, line = med["fully_connected"], med["erdos_renyi"], med["line"]
    ok = fc <= er <= line and fc < line
    return CheckResult("5 topology ordering", ok, f"median iterations to {threshold:g}: FC {fc}, Rand {er}, Line {line}")


def check_lift_consistency(runs=5, K=6, iterations=60, N=500):
    worst = 0.0
    for r in range(runs):
        cfg = ExperimentConfig(
            K=K, Q=2, M=4, topology="erdos_renyi", mode="sampled", N=N, mc_runs=1,
            max_iterations=iterations, master_seed=100 + r, debug=True,
        )
        for records in simulate_many(cfg):
            for rec in records:
                worst = max(worst, *(rec.diagnostics[key] for key in ("lift_y", "lift_B", "lift_X", "output")))
    return CheckResult("7 lift-map consistency", worst <= LIFT_TOL, f"worst relative deviation {worst:.1e} (tol {LIFT_TOL:g})")


def check_gather_sums(trees=100, seed=0, Q=2, N=5, L=2):
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(trees):
        K = int(rng.integers(2, 13))
        edges = oracles.random_tree_edges(K, rng)
        graph = NetworkGraph(K, frozenset(edges))
        q = int(rng.integers(1, K + 1))
        tree = prune_to_tree(graph, q)
        blocks = {
            k: CompressedBlock(rng.integers(-50, 50, (Q, N)).astype(float), rng.integers(-50, 50, (Q, L)).astype(float))
            for k in graph.nodes
            if k != q
        }
        agg = fuse_forward(tree, gather_schedule(tree), blocks)
        members = oracles.branch_members(K, edges, q)
        if set(agg) != set(members):
            mismatches += 1
            continue
        for n, nodes in members.items():
            y = sum(blocks[k].y_hat for k in nodes)
            Bs = sum(blocks[k].B_hat for k in nodes)
            if not (np.array_equal(agg[n].y_hat, y) and np.array_equal(agg[n].B_hat, Bs)):
                mismatches += 1
    return CheckResult("8 gather-sum oracle", mismatches == 0, f"{mismatches} mismatching trees out of {trees}")


def check_communication(iterations=20, N=200):
    bad = 0
    total = 0
    for topo in TOPOLOGIES:
        cfg = reference_config(mode="sampled", N=N, mc_runs=1, max_iterations=iterations)
        records = simulate_many(cfg, topology=topo)[0]
        K, Q, L = cfg.K, cfg.Q, cfg.Q
        up = (K - 1) * (Q * N + Q * L)
        down = (K - 1) * (Q * N + Q * L + Q * Q)
        for rec in records:
            total += 1
            if rec.scalars_up.sum() != up or rec.scalars_down.sum() != down:
                bad += 1
    return CheckResult("9 communication accounting", bad == 0, f"{bad} of {total} iterations off the closed form")


def check_determinism(iterations=40):
    with tempfile.TemporaryDirectory() as tmp:
        blobs = []
        for attempt in range(2):
            cfg = reference_config(topology="erdos_renyi", mc_runs=2, max_iterations=iterations, out=str(Path(tmp) / str(attempt)))
            blobs.append(run_experiment(cfg)["raw"].read_bytes())
    same = blobs[0] == blobs[1]
    return CheckResult("10 determinism", same, "raw CSVs byte-identical" if same else "raw CSVs differ")


def run_all(runs=20, monotone_runs=10, jobs=1, include_sampled=True):
    records = exact_records(max(runs, monotone_runs), jobs)
    results = [check_oracle_equivalence(), check_coupling(), check_monotone_feasible(records, monotone_runs)]
    curves = {topo: worst_curves(recs[:runs]) for topo, recs in records.items()}
    results += [check_convergence(curves), check_ordering(curves)]
    if include_sampled:
        sampled = convergence_runs(runs, jobs, iterations=CONVERGENCE_ITERS, mode="sampled")
        results.append(check_convergence(sampled, SAMPLED_MSE, name="6 convergence (sampled N=10000)"))
    results += [check_lift_consistency(), check_gather_sums(), check_communication(), check_determinism()]
    return results
