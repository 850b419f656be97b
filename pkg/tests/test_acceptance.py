"""The ten acceptance gates at their stated tolerances.

Exact-statistics runs of the reference setting (K=10, Q=3, M_k=7,
trace-QCLP, 20 Monte-Carlo runs per topology) are computed once per module
and shared between the monotonicity, convergence and ordering gates. Each
test prints one PASS/FAIL line; the lines are also collected into a
terminal summary section.
"""
import os

import pytest

from dansf import verify

from conftest import ACCEPTANCE_LINES

JOBS = int(os.environ.get("DANSF_JOBS", "1"))
RUNS = 20
THEOREM_RUNS = 10


def report(result):
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line


@pytest.fixture(scope="module")
def exact_records():
    return verify.exact_records(RUNS, JOBS, iterations=verify.ORDERING_ITERS)


@pytest.fixture(scope="module")
def exact_curves(exact_records):
    return verify.convergence_runs(records=exact_records)


def test_c01_oracle_equivalence():
    report(verify.check_oracle_equivalence(instances=20))


def test_c02_assumption1_family():
    report(verify.check_coupling())


@pytest.mark.slow
def test_c03_monotone_cost_and_feasibility(exact_records):
    report(verify.check_monotone_feasible(exact_records, runs=THEOREM_RUNS, iterations=verify.CONVERGENCE_ITERS))


@pytest.mark.slow
def test_c04_exact_convergence(exact_curves):
    report(verify.check_convergence(exact_curves, verify.CONVERGENCE_MSE, verify.CONVERGENCE_ITERS))


@pytest.mark.slow
def test_c05_topology_ordering(exact_curves):
    report(verify.check_ordering(exact_curves, verify.ORDERING_THRESHOLD))


@pytest.mark.slow
def test_c06_sampled_convergence():
    curves = verify.convergence_runs(RUNS, JOBS, iterations=verify.CONVERGENCE_ITERS, mode="sampled", N=verify.SAMPLED_N)
    report(verify.check_convergence(curves, verify.SAMPLED_MSE, verify.CONVERGENCE_ITERS,
                                    name="6 convergence (sampled N=10000)"))


def test_c07_lift_map_consistency():
    report(verify.check_lift_consistency(runs=5, K=6))


def test_c08_gather_sum_oracle():
    report(verify.check_gather_sums(trees=100))


def test_c09_communication_accounting():
    report(verify.check_communication())


def test_c10_determinism():
    report(verify.check_determinism())
