"""The distributed node-specific fusion iteration.

One call to :meth:`Simulation.step` performs a full round:

1. pick the updating node ``q`` round-robin and prune the graph to a tree;
2. every node compresses its block with its ``M_k x Q`` compressor;
3. compressed blocks are summed and forwarded towards ``q``;
4. ``q`` stacks its raw channels over the branch aggregates, solves its own
   problem on that ``M~_q``-channel signal and splits the result into its new
   compressor and one ``Q x Q`` G-matrix per branch;
5. ``q`` disseminates its fused output; every other node solves its own
   problem on that ``Q``-channel stream to obtain its correction ``F_kq``.

Compressor update rule
----------------------
With ``compressor_update="shared"`` (the default) every compressor becomes the
corresponding block of ``X_q^{i+1}``: ``X_kk <- X_kk G_qn``. Node ``k``'s own
filter is still ``X_k^{i+1} = X_q^{i+1} F_kq`` and its output ``F_kq^T z_q``.
The alternative ``"node_specific"`` rule also folds ``F_kq`` into the
compressor (``X_kk <- X_kk G_qn F_kq``). On trees where a branch holds several
nodes with different couplings, the branch sum then mixes incompatible
bases and the iteration stalls away from the optimum; it is kept for
comparison only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DansfError, InvalidConfig, IterationAbort
from .network import LinkCostLedger, gather_schedule, prune_to_tree, scatter_schedule
from .signals import default_ridge, exact_batch, regularize, sample_batch, batch_from_covariance
from .metrics import relative_mse

log = logging.getLogger(__name__)

UPDATE_RULES = ("shared", "node_specific")


@dataclass
class NodeState:
    k: int
    compressor: np.ndarray
    problem: object
    latest_F: np.ndarray | None = None
    latest_output: np.ndarray | None = None
    full_filter: np.ndarray | None = None


@dataclass(frozen=True)
class CompressedBlock:
    y_hat: np.ndarray
    B_hat: np.ndarray

    def __add__(self, other):
        return CompressedBlock(self.y_hat + other.y_hat, self.B_hat + other.B_hat)

    @property
    def size(self):
        return self.y_hat.size + self.B_hat.size


@dataclass(frozen=True)
class LocalData:
    q: int
    y_tilde: np.ndarray
    B_tilde: np.ndarray
    neighbor_order: tuple
    M_q: int
    Q: int
    latent: np.ndarray | None = None

    @property
    def M_tilde(self):
        return self.M_q + len(self.neighbor_order) * self.Q


@dataclass(frozen=True)
class LocalSolution:
    X_tilde: np.ndarray
    M_q: int
    neighbor_order: tuple

    @property
    def Q(self):
        return self.X_tilde.shape[1]

    @property
    def X_qq(self):
        return self.X_tilde[: self.M_q]

    @property
    def G_blocks(self):
        Q = self.Q
        return {
            n: self.X_tilde[self.M_q + j * Q : self.M_q + (j + 1) * Q]
            for j, n in enumerate(self.neighbor_order)
        }


@dataclass(frozen=True)
class Package:
    """What node ``q`` sends down the tree to one node."""

    z: np.ndarray
    Z: np.ndarray
    G: np.ndarray


@dataclass
class IterationRecord:
    i: int
    q: int
    cost: np.ndarray
    feasibility: np.ndarray
    mse: np.ndarray
    scalars_up: np.ndarray
    scalars_down: np.ndarray
    local_feasibility: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def select_updating_node(i, K):
    return (i % K) + 1


def compress(node, y_k, B_k):
    X = node.compressor if isinstance(node, NodeState) else node
    if y_k.shape[0] != X.shape[0] or B_k.shape[0] != X.shape[0]:
        raise InvalidConfig(f"compressor has {X.shape[0]} rows, data has {y_k.shape[0]}/{B_k.shape[0]}")
    return CompressedBlock(X.T @ y_k, X.T @ B_k)


def fuse_forward(tree, schedule, blocks, ledger=None):
    """Sum-and-forward the compressed blocks towards the root.

    Each node adds what it received from its children to its own block and
    sends the sum to its parent. Returns the aggregate received from every
    root neighbour, keyed by that neighbour.
    """
    senders = [s for s, _ in schedule]
    if sorted(senders) != sorted(k for k in range(1, tree.num_nodes + 1) if k != tree.root):
        raise InvalidConfig("schedule does not cover every non-root node exactly once")
    inbox = {k: [] for k in range(1, tree.num_nodes + 1)}
    sent = set()
    aggregates = {}
    for s, r in schedule:
        if tree.parent[s] != r:
            raise InvalidConfig(f"schedule sends {s}->{r} but the parent of {s} is {tree.parent[s]}")
        if any(c not in sent for c in tree.children(s)):
            raise InvalidConfig(f"node {s} sends before all its children")
        message = blocks[s]
        for part in inbox[s]:
            message = message + part
        if ledger is not None:
            ledger.record((s, r), message.size)
        inbox[r].append(message)
        sent.add(s)
        if r == tree.root:
            aggregates[s] = message
    return aggregates


def assemble_local(q, y_q, B_q, aggregates, neighbor_order, latent=None):
    missing = [n for n in neighbor_order if n not in aggregates]
    if missing:
        raise InvalidConfig(f"no aggregate from root neighbour(s) {missing}")
    Q = aggregates[neighbor_order[0]].y_hat.shape[0] if neighbor_order else 0
    y_tilde = np.vstack([y_q] + [aggregates[n].y_hat for n in neighbor_order])
    B_tilde = np.vstack([B_q] + [aggregates[n].B_hat for n in neighbor_order])
    return LocalData(q, y_tilde, B_tilde, tuple(neighbor_order), y_q.shape[0], Q, latent)


def build_tie_break_ref(compressor, n_neighbors):
    Q = compressor.shape[1]
    return np.vstack([compressor] + [np.eye(Q)] * n_neighbors)


def _statistics(y, B, latent, ridge):
    N = y.shape[1]
    R = y @ y.T / N
    R = regularize(R, ridge(R))
    R_yl = R_ll = None
    if latent is not None:
        R_yl = y @ latent.T / N
        R_ll = latent @ latent.T / N
    return R, B, R_yl, R_ll


def _ridge_rule(sampled, ridge):
    if ridge is not None:
        return lambda R: ridge
    return lambda R: default_ridge(R, sampled)


def local_problem_data(local, node_problem, ridge=lambda R: 0.0):
    return node_problem.data(*_statistics(local.y_tilde, local.B_tilde, local.latent, ridge))


def solve_local(local, node_problem, tie_break_ref=None, ridge=lambda R: 0.0):
    data = local_problem_data(local, node_problem, ridge)
    X_tilde = node_problem.instance.solve(data, tie_break_ref=tie_break_ref)
    return LocalSolution(X_tilde, local.M_q, local.neighbor_order)


def disseminate(q, solution, local, tree, ledger=None):
    z = solution.X_tilde.T @ local.y_tilde
    Z = solution.X_tilde.T @ local.B_tilde
    G = solution.G_blocks
    if ledger is not None:
        Q = solution.Q
        for edge in scatter_schedule(tree):
            ledger.record(edge, z.size + Z.size + Q * Q)
    return {k: Package(z, Z, G[tree.branch_of[k]]) for k in range(1, tree.num_nodes + 1) if k != q}


def node_specific_data(package, node_problem, latent=None, ridge=lambda R: 0.0):
    return node_problem.data(*_statistics(package.z, package.Z, latent, ridge))


def solve_node_specific(package, node_problem, latent=None, latest_F=None, ridge=lambda R: 0.0):
    data = node_specific_data(package, node_problem, latent, ridge)
    Q = package.z.shape[0]
    ref = latest_F if latest_F is not None else np.eye(Q)
    return node_problem.instance.solve(data, tie_break_ref=ref)


def whitening_basis(z):
    """``T`` with ``T^T (z z^T / N) T = I``, or ``None`` if ``z`` is rank deficient."""
    R = z @ z.T / z.shape[1]
    try:
        Lc = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        return None
    d = np.abs(np.diag(Lc))
    if d.min() <= 1e-12 * d.max():
        return None
    return linalg.solve_triangular(Lc, np.eye(R.shape[0]), lower=True).T


def network_filter(q, solution, tree, compressors, layout):
    """``X_q^{i+1}`` assembled blockwise: new compressor at q, ``X_kk G_qn`` elsewhere."""
    blocks = []
    G = solution.G_blocks
    for k in range(1, layout.num_nodes + 1):
        blocks.append(solution.X_qq if k == q else compressors[k] @ G[tree.branch_of[k]])
    return np.vstack(blocks)


def lift_map(tree, compressors, layout, Q):
    """Explicit ``M x M~_q`` matrix with ``y~ = C^T y`` for the current tree."""
    q = tree.root
    order = tree.root_neighbors
    M_q = layout.per_node_channels[q - 1]
    C = np.zeros((layout.total, M_q + len(order) * Q))
    C[layout.rows(q), :M_q] = np.eye(M_q)
    col = {n: M_q + j * Q for j, n in enumerate(order)}
    for k in range(1, layout.num_nodes + 1):
        if k != q:
            c = col[tree.branch_of[k]]
            C[layout.rows(k), c : c + Q] = compressors[k]
    return C


def apply_updates(states, q, solution, tree, Fs, rule="shared"):
    """Refresh every compressor after node ``q``'s solve (in place)."""
    if rule not in UPDATE_RULES:
        raise InvalidConfig(f"unknown compressor update rule {rule!r}")
    G = solution.G_blocks
    for k, st in states.items():
        if k == q:
            st.compressor = solution.X_qq.copy()
            continue
        new = st.compressor @ G[tree.branch_of[k]]
        F = Fs[k]
        if not np.all(np.isfinite(F)) or np.linalg.matrix_rank(F) < F.shape[0]:
            log.debug("node %d: correction F is singular", k)
        if rule == "node_specific":
            new = new @ F
        st.compressor = new
        st.latest_F = F
    return states


def filter_output(k, q, solution=None, local=None, F=None, z_q=None):
    if k == q:
        return solution.X_tilde.T @ local.y_tilde
    return F.T @ z_q


def _rel_dev(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


@dataclass(frozen=True)
class EngineConfig:
    max_iterations: int = 300
    mode: str = "exact"
    N: int = 10_000
    ridge: float | None = None
    compressor_update: str = "shared"
    debug: bool = False
    early_stop: float | None = None
    basis_normalization: bool = True

    def __post_init__(self):
        if self.mode not in ("exact", "sampled"):
            raise InvalidConfig(f"mode must be 'exact' or 'sampled', got {self.mode!r}")
        if self.compressor_update not in UPDATE_RULES:
            raise InvalidConfig(f"compressor_update must be one of {UPDATE_RULES}")
        if self.max_iterations < 0 or self.N < 1:
            raise InvalidConfig("max_iterations must be >= 0 and N >= 1")


def init_compressors(layout, Q, rng):
    out = {}
    for k, M_k in enumerate(layout.per_node_channels, start=1):
        while True:
            X = rng.standard_normal((M_k, Q))
            if np.linalg.matrix_rank(X) == min(M_k, Q):
                break
        out[k] = X
    return out


class Simulation:
    """A single seeded run over one graph and one coupled family."""

    def __init__(self, config, graph, family, model=None, seed=0):
        if graph.num_nodes != family.K:
            raise InvalidConfig("graph and family disagree on K")
        if config.mode == "sampled" and model is None:
            raise InvalidConfig("sampled mode needs a mixture model")
        self.config = config
        self.graph = graph
        self.family = family
        self.model = model
        self.layout = family.layout
        self.Q = family.Q
        init_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
        self._sample_rng = np.random.default_rng(sample_ss)
        compressors = init_compressors(self.layout, self.Q, np.random.default_rng(init_ss))
        self.states = {k: NodeState(k, compressors[k], family.node(k)) for k in graph.nodes}
        self.ledger = LinkCostLedger()
        self.i = 0
        self._ridge = _ridge_rule(config.mode == "sampled", config.ridge)
        self._full = {k: family.data(k) for k in graph.nodes}
        self._oracles = {k: family.oracle(k) for k in graph.nodes}
        self._exact_batch = None
        if config.mode == "exact":
            if model is not None:
                self._exact_batch = exact_batch(model, self.layout)
            else:
                if family.kind == "mmse":
                    raise InvalidConfig("mmse in exact mode needs the mixture model")
                self._exact_batch = batch_from_covariance(family.R, self.layout)

    @property
    def K(self):
        return self.graph.num_nodes

    def next_batch(self):
        if self._exact_batch is not None:
            return self._exact_batch
        return sample_batch(self.model, self.layout, self.config.N, self._sample_rng)

    def step(self):
        i = self.i
        q = select_updating_node(i, self.K)
        try:
            record = self._step(i, q)
        except DansfError as exc:
            raise IterationAbort(i, q, exc) from exc
        self.i += 1
        return record

    def _step(self, i, q):
        cfg, layout, fam = self.config, self.layout, self.family
        tree = prune_to_tree(self.graph, q)
        self.ledger.open(tree)
        batch = self.next_batch()
        y, B, latent = batch.data, fam.B, batch.latent
        compressors = {k: st.compressor for k, st in self.states.items()}

        blocks = {
            k: compress(self.states[k], y[layout.rows(k)], B[layout.rows(k)])
            for k in self.graph.nodes
            if k != q
        }
        aggregates = fuse_forward(tree, gather_schedule(tree), blocks, self.ledger)
        up = {k: self.ledger.sent_by(k) for k in self.graph.nodes}
        gathered = dict(self.ledger.iteration_scalars)

        order = tree.root_neighbors
        local = assemble_local(q, y[layout.rows(q)], B[layout.rows(q)], aggregates, order, latent)
        ref = build_tie_break_ref(compressors[q], len(order))
        q_state = self.states[q]
        local_data = local_problem_data(local, q_state.problem, self._ridge)
        solution = LocalSolution(
            q_state.problem.instance.solve(local_data, tie_break_ref=ref), local.M_q, order
        )
        local_feas = q_state.problem.instance.feasibility_residual(solution.X_tilde, local_data)

        X_q = network_filter(q, solution, tree, compressors, layout)
        z_q = filter_output(q, q, solution=solution, local=local)
        shared = solution
        if cfg.basis_normalization:
            T = whitening_basis(z_q)
            if T is not None:
                shared = LocalSolution(solution.X_tilde @ T, local.M_q, order)

        packages = disseminate(q, shared, local, tree, self.ledger)
        down = {
            k: sum(v for (s, r), v in self.ledger.iteration_scalars.items() if r == k)
            - sum(v for (s, r), v in gathered.items() if r == k)
            for k in self.graph.nodes
        }

        Fs = {}
        for k, pkg in packages.items():
            st = self.states[k]
            data_k = node_specific_data(pkg, st.problem, latent, self._ridge)
            ref_k = st.latest_F if st.latest_F is not None else np.eye(self.Q)
            Fs[k] = st.problem.instance.solve(data_k, tie_break_ref=ref_k)
            local_feas = max(local_feas, st.problem.instance.feasibility_residual(Fs[k], data_k))

        X_shared = X_q if shared is solution else network_filter(q, shared, tree, compressors, layout)
        filters, outputs = {}, {}
        for k in self.graph.nodes:
            filters[k] = X_q if k == q else X_shared @ Fs[k]
            outputs[k] = z_q if k == q else filter_output(k, q, F=Fs[k], z_q=packages[k].z)

        diagnostics = {}
        if cfg.debug:
            diagnostics = self._debug_checks(tree, compressors, local, solution, shared, X_q, Fs, filters, outputs, y, B)

        apply_updates(self.states, q, shared, tree, Fs, cfg.compressor_update)
        for k, st in self.states.items():
            st.latest_output = outputs[k]
            if cfg.debug:
                st.full_filter = filters[k]

        prob = fam.problem
        K = self.K
        cost = np.empty(K)
        feas = np.empty(K)
        mse = np.empty(K)
        for k in self.graph.nodes:
            cost[k - 1] = prob.objective(filters[k], self._full[k])
            feas[k - 1] = prob.feasibility_residual(filters[k], self._full[k])
            mse[k - 1] = relative_mse(filters[k], self._oracles[k])
        return IterationRecord(
            i=i,
            q=q,
            cost=cost,
            feasibility=feas,
            mse=mse,
            scalars_up=np.array([up[k] for k in self.graph.nodes]),
            scalars_down=np.array([down[k] for k in self.graph.nodes]),
            local_feasibility=float(local_feas),
            diagnostics=diagnostics,
        )

    def _debug_checks(self, tree, compressors, local, solution, shared, X_q, Fs, filters, outputs, y, B):
        C = lift_map(tree, compressors, self.layout, self.Q)
        out = {
            "lift_y": _rel_dev(local.y_tilde, C.T @ y),
            "lift_B": _rel_dev(local.B_tilde, C.T @ B) if B.size else 0.0,
            "lift_X": _rel_dev(X_q, C @ solution.X_tilde),
        }
        out["output"] = max(_rel_dev(outputs[k], filters[k].T @ y) for k in outputs)
        # k-th block of X_k^{i+1} against the blockwise X_kk G_qn F_kq update
        block = 0.0
        for k, F in Fs.items():
            expected = compressors[k] @ shared.G_blocks[tree.branch_of[k]] @ F
            block = max(block, _rel_dev(filters[k][self.layout.rows(k)], expected))
        out["block_update"] = block
        return out

    def run(self):
        records = []
        streak = 0
        for _ in range(self.config.max_iterations):
            rec = self.step()
            records.append(rec)
            if self.config.early_stop is not None:
                streak = streak + 1 if rec.mse.max() < self.config.early_stop else 0
                if streak >= 2 * self.K:
                    break
        return records


def run(config, graph, family, model=None, seed=0):
    return Simulation(config, graph, family, model, seed).run()
