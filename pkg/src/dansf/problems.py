"""Node-specific spatial filtering problems and their closed-form solvers.

Every problem is posed on second-order statistics of *some* signal: the full
``M``-channel network signal, the ``M~``-channel signal gathered by the
updating node, or the ``Q``-channel stream it disseminates. The solvers are
therefore dimension-agnostic; only the row count of ``R`` changes.

Node-specific behaviour is expressed through a shared statistic mixed by a
per-node ``Q x Q`` matrix ``D_k``:

* ``trace_qclp``: minimise ``trace(X^T B D_k)`` s.t. ``trace(X^T R X) <= 1``
* ``mmse``: target ``d_k = D_k^T d`` for a shared latent source ``d``
* ``lcmv``: response ``H_k = D_k^T H`` for shared ``B`` and ``H``
"""
from __future__ import annotations

import abc
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DegenerateProblem, InvalidConfig, RankDeficientConstraint, SingularCovariance
from .signals import ChannelLayout, MixtureModel, exact_covariance, exact_cross_covariance

TOL_FEAS = 1e-8
_RCOND_MIN = 1e-14
MAX_COUPLING_COND = 1e6


@dataclass(frozen=True)
class ProblemData:
    """Statistics one node's problem is posed on.

    ``B`` is the (node-specific, where relevant) deterministic matrix,
    ``R_yd``/``R_dd`` the cross- and auto-covariance of the MMSE target and
    ``H`` the LCMV response.
    """

    R: np.ndarray
    B: np.ndarray | None = None
    R_yd: np.ndarray | None = None
    R_dd: np.ndarray | None = None
    H: np.ndarray | None = None

    @property
    def dim(self):
        return self.R.shape[0]


def _cho(R):
    try:
        c, lower = linalg.cho_factor(R, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite") from None
    d = np.abs(np.diag(c))
    if d.min() ** 2 < _RCOND_MIN * d.max() ** 2:
        raise SingularCovariance("covariance is numerically singular")
    return c, lower


def spd_solve(R, rhs):
    return linalg.cho_solve(_cho(R), rhs)


def trace_qclp_solve(data):
    """``X* = -beta R^{-1} B`` with ``beta = trace(B^T R^{-1} B)^{-1/2}``."""
    B = data.B
    if B is None or not np.any(B):
        raise DegenerateProblem("trace-QCLP needs B != 0")
    U = spd_solve(data.R, B)
    beta = 1.0 / np.sqrt(np.trace(B.T @ U))
    return -beta * U


def mmse_solve(data):
    return spd_solve(data.R, data.R_yd)


def lcmv_solve(data):
    B, H = data.B, data.H
    L = B.shape[1]
    if np.linalg.matrix_rank(B) < L:
        raise RankDeficientConstraint(f"B has rank < {L}")
    U = spd_solve(data.R, B)
    gram = B.T @ U
    return U @ np.linalg.solve(gram, H.T)


class ProblemInstance(abc.ABC):
    """Objective, constraints and solver of one problem family."""

    kind = ""

    @abc.abstractmethod
    def objective(self, X, data): ...

    def constraint_residuals(self, X, data):
        """``(inequality, equality)`` residual vectors; feasible iff ineq <= 0, eq == 0."""
        return np.zeros(0), np.zeros(0)

    @abc.abstractmethod
    def solve(self, data, tie_break_ref=None): ...

    def is_solution_unique(self, data):
        return True

    def feasibility_residual(self, X, data):
        ineq, eq = self.constraint_residuals(X, data)
        worst = 0.0
        if ineq.size:
            worst = max(worst, float(ineq.max()))
        if eq.size:
            worst = max(worst, float(np.abs(eq).max()))
        return worst


class TraceQCLP(ProblemInstance):
    kind = "trace_qclp"

    def objective(self, X, data):
        return float(np.trace(X.T @ data.B))

    def constraint_residuals(self, X, data):
        return np.array([np.trace(X.T @ data.R @ X) - 1.0]), np.zeros(0)

    def solve(self, data, tie_break_ref=None):
        return trace_qclp_solve(data)


class MMSE(ProblemInstance):
    kind = "mmse"

    def objective(self, X, data):
        val = np.trace(X.T @ data.R @ X) - 2.0 * np.trace(X.T @ data.R_yd)
        if data.R_dd is not None:
            val += np.trace(data.R_dd)
        return float(val)

    def solve(self, data, tie_break_ref=None):
        return mmse_solve(data)


class LCMV(ProblemInstance):
    kind = "lcmv"

    def objective(self, X, data):
        return float(np.trace(X.T @ data.R @ X))

    def constraint_residuals(self, X, data):
        return np.zeros(0), (X.T @ data.B - data.H).ravel()

    def solve(self, data, tie_break_ref=None):
        return lcmv_solve(data)


PROBLEMS = {cls.kind: cls() for cls in (TraceQCLP, MMSE, LCMV)}


def get_problem(kind):
    try:
        return PROBLEMS[kind]
    except KeyError:
        raise InvalidConfig(f"unknown problem kind {kind!r}; choose from {sorted(PROBLEMS)}") from None


@dataclass(frozen=True)
class NodeProblem:
    """A problem instance bound to node ``k``'s private parameters."""

    instance: ProblemInstance
    D: np.ndarray
    H: np.ndarray | None = None

    def data(self, R, B=None, R_yl=None, R_ll=None):
        """Node data from statistics of any signal (full, gathered or fused).

        ``B`` is the shared deterministic matrix and ``R_yl``/``R_ll`` the
        cross-/auto-covariance with the shared latent source, all expressed
        for the signal whose covariance is ``R``.
        """
        kind = self.instance.kind
        if kind == "trace_qclp":
            return ProblemData(R, B=B @ self.D)
        if kind == "mmse":
            R_dd = None if R_ll is None else self.D.T @ R_ll @ self.D
            return ProblemData(R, R_yd=R_yl @ self.D, R_dd=R_dd)
        if kind == "lcmv":
            return ProblemData(R, B=B, H=self.D.T @ self.H)
        # Custom instances receive the shared statistics untouched.
        return ProblemData(R, B=B, R_yd=R_yl, R_dd=R_ll, H=self.H)


def _well_conditioned(rng, Q):
    while True:
        D = rng.normal(size=(Q, Q))
        if np.linalg.cond(D) <= MAX_COUPLING_COND:
            return D


@dataclass(frozen=True)
class CoupledFamily:
    """Per-node problems whose solutions satisfy ``X_k* = X_l* D_{k,l}``.

    ``couplings[k-1, l-1]`` stores ``D_{k,l}`` as computed when the family was
    built; replacing ``D`` afterwards leaves the stored couplings stale, which
    is how a broken family is simulated.
    """

    kind: str
    layout: ChannelLayout
    Q: int
    R: np.ndarray
    B: np.ndarray
    D: tuple
    R_yl: np.ndarray | None = None
    R_ll: np.ndarray | None = None
    H: np.ndarray | None = None
    couplings: np.ndarray | None = None
    _oracles: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.couplings is None:
            object.__setattr__(self, "couplings", self._compute_couplings())

    @property
    def K(self):
        return len(self.D)

    @property
    def L(self):
        return self.B.shape[1]

    @property
    def problem(self):
        return get_problem(self.kind)

    def node(self, k):
        return NodeProblem(self.problem, self.D[k - 1], self.H)

    def data(self, k):
        return self.node(k).data(self.R, self.B, self.R_yl, self.R_ll)

    def oracle(self, k):
        if k not in self._oracles:
            self._oracles[k] = self.problem.solve(self.data(k))
        return self._oracles[k]

    def coupling(self, k, l):
        return self.couplings[k - 1, l - 1]

    def _beta(self, k):
        U = np.linalg.solve(self.R, self.B @ self.D[k - 1])
        return 1.0 / np.sqrt(np.trace((self.B @ self.D[k - 1]).T @ U))

    def _compute_couplings(self):
        K, Q = len(self.D), self.Q
        out = np.empty((K, K, Q, Q))
        betas = [self._beta(k) for k in range(1, K + 1)] if self.kind == "trace_qclp" else None
        for k in range(K):
            for l in range(K):
                Dkl = np.linalg.solve(self.D[l], self.D[k])
                if betas is not None:
                    Dkl = Dkl * betas[k] / betas[l]
                out[k, l] = Dkl
        return out


def make_coupled_family(kind, K, Q, layout, model_or_covariance, rng_seed=None, L=None):
    """Draw a random Assumption-1 family over ``K`` nodes.

    ``B`` (and ``H`` for LCMV) and every ``D_k`` have i.i.d. standard normal
    entries; ``D_k`` is redrawn while its condition number exceeds 1e6.
    MMSE needs a :class:`MixtureModel` because its target is the latent source.
    """
    get_problem(kind)
    if Q < 1:
        raise InvalidConfig("Q must be positive")
    if layout.num_nodes != K:
        raise InvalidConfig("layout node count does not match K")
    rng = np.random.default_rng(rng_seed)
    model = model_or_covariance if isinstance(model_or_covariance, MixtureModel) else None
    if model is not None:
        R = exact_covariance(model).R
    else:
        R = getattr(model_or_covariance, "R", model_or_covariance)
    M = layout.total
    if R.shape != (M, M):
        raise InvalidConfig(f"covariance is {R.shape}, layout needs {(M, M)}")
    R_yl = R_ll = H = None
    if kind == "trace_qclp":
        if L not in (None, Q):
            raise InvalidConfig("trace_qclp requires L = Q")
        B = rng.normal(size=(M, Q))
    elif kind == "mmse":
        if model is None:
            raise InvalidConfig("mmse families need a mixture model (latent target)")
        if model.Q != Q:
            raise InvalidConfig("mixture source count must equal Q for mmse")
        B = np.zeros((M, 0))
        R_yl = exact_cross_covariance(model)
        R_ll = model.var_d * np.eye(Q)
    else:
        L = Q if L is None else L
        B = rng.normal(size=(M, L))
    D = tuple(_well_conditioned(rng, Q) for _ in range(K))
    if kind == "lcmv":
        H = rng.normal(size=(Q, L))
    return CoupledFamily(kind, layout, Q, R, B, D, R_yl=R_yl, R_ll=R_ll, H=H)


@dataclass(frozen=True)
class CouplingReport:
    max_deviation: float
    worst_pair: tuple
    tol: float

    @property
    def ok(self):
        return self.max_deviation <= self.tol


def verify_coupling(family, tol=1e-9):
    """Worst relative ``||X_k* - X_l* D_{k,l}||_F / ||X_k*||_F`` over all pairs."""
    worst, pair = 0.0, (1, 1)
    for k in range(1, family.K + 1):
        Xk = family.oracle(k)
        scale = np.linalg.norm(Xk)
        for l in range(1, family.K + 1):
            dev = np.linalg.norm(Xk - family.oracle(l) @ family.coupling(k, l)) / scale
            if dev > worst:
                worst, pair = float(dev), (k, l)
    return CouplingReport(worst, pair, tol)


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def family_to_json(family):
    doc = {
        "kind": family.kind,
        "layout": list(family.layout.per_node_channels),
        "Q": family.Q,
        "R": _arr(family.R),
        "B": _arr(family.B),
        "B_shape": list(family.B.shape),
        "D": [_arr(d) for d in family.D],
        "R_yl": _arr(family.R_yl),
        "R_ll": _arr(family.R_ll),
        "H": _arr(family.H),
        "couplings": _arr(family.couplings),
    }
    return json.dumps(doc)


def family_from_json(text):
    doc = json.loads(text)

    def arr(key):
        return None if doc[key] is None else np.array(doc[key], dtype=float)

    B = np.array(doc["B"], dtype=float).reshape(doc["B_shape"])
    return CoupledFamily(
        kind=doc["kind"],
        layout=ChannelLayout(tuple(doc["layout"])),
        Q=doc["Q"],
        R=arr("R"),
        B=B,
        D=tuple(np.array(d, dtype=float) for d in doc["D"]),
        R_yl=arr("R_yl"),
        R_ll=arr("R_ll"),
        H=arr("H"),
        couplings=arr("couplings"),
    )
