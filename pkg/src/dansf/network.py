"""Network topologies, per-iteration tree pruning and link accounting.

Node ids are 1-based throughout (nodes ``1..K``). Undirected edges are stored
as ``(k, l)`` tuples with ``k < l``; directed transfers as ``(sender, receiver)``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AccountingError, GenerationFailure, InvalidConfig, InvalidGraph

ER_MAX_ATTEMPTS = 1000


def _norm_edge(k, l):
    k, l = int(k), int(l)
    return (k, l) if k < l else (l, k)


def _bfs_distances(num_nodes, adjacency, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        k = queue.popleft()
        for l in adjacency[k]:
            if l not in dist:
                dist[l] = dist[k] + 1
                queue.append(l)
    return dist


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected connected graph over nodes ``1..num_nodes``."""

    num_nodes: int
    edges: frozenset

    def __post_init__(self):
        if self.num_nodes < 1:
            raise InvalidGraph("a network needs at least one node")
        edges = set()
        for k, l in self.edges:
            if k == l:
                raise InvalidGraph(f"self-loop at node {k}")
            if not (1 <= k <= self.num_nodes and 1 <= l <= self.num_nodes):
                raise InvalidGraph(f"edge ({k}, {l}) outside 1..{self.num_nodes}")
            edges.add(_norm_edge(k, l))
        object.__setattr__(self, "edges", frozenset(edges))
        adjacency = {k: [] for k in range(1, self.num_nodes + 1)}
        for k, l in sorted(edges):
            adjacency[k].append(l)
            adjacency[l].append(k)
        adjacency = {k: tuple(sorted(v)) for k, v in adjacency.items()}
        object.__setattr__(self, "_adjacency", adjacency)
        if len(_bfs_distances(self.num_nodes, adjacency, 1)) != self.num_nodes:
            raise InvalidGraph("graph is not connected")

    @property
    def nodes(self):
        return range(1, self.num_nodes + 1)

    def neighbors(self, k):
        return self._adjacency[k]

    def degree(self, k):
        return len(self._adjacency[k])

    def to_edge_list(self):
        lines = [str(self.num_nodes)] + [f"{k} {l}" for k, l in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text):
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or len(rows[0]) != 1:
            raise InvalidGraph("edge list must start with a line holding K")
        try:
            num_nodes = int(rows[0][0])
            edges = [(int(a), int(b)) for a, b in rows[1:]]
        except ValueError as exc:
            raise InvalidGraph(f"malformed edge list: {exc}") from None
        return cls(num_nodes, frozenset(edges))


def read_topology(path):
    return NetworkGraph.from_edge_list(Path(path).read_text())


def write_topology(graph, path):
    Path(path).write_text(graph.to_edge_list())


def default_er_probability(K):
    return min(1.0, 2.0 * math.log(K) / K)


def generate_topology(kind, K, seed=0, p=None):
    """Build a connected graph of the requested kind.

    ``kind`` is one of ``fully_connected``, ``line`` or ``erdos_renyi``. For
    Erdős–Rényi graphs every attempt draws from its own stream derived from
    ``(seed, attempt)``; the first connected draw is returned.
    """
    if K < 2:
        raise InvalidConfig(f"topology needs K >= 2, got {K}")
    if kind == "fully_connected":
        edges = [(k, l) for k in range(1, K + 1) for l in range(k + 1, K + 1)]
        return NetworkGraph(K, frozenset(edges))
    if kind == "line":
        return NetworkGraph(K, frozenset((k, k + 1) for k in range(1, K)))
    if kind == "erdos_renyi":
        p = default_er_probability(K) if p is None else p
        if not 0 < p <= 1:
            raise InvalidConfig(f"edge probability must lie in (0, 1], got {p}")
        iu, ju = np.triu_indices(K, k=1)
        for attempt in range(ER_MAX_ATTEMPTS):
            rng = np.random.default_rng([seed, attempt])
            keep = rng.random(iu.size) < p
            edges = frozenset(zip((iu[keep] + 1).tolist(), (ju[keep] + 1).tolist()))
            try:
                return NetworkGraph(K, edges)
            except InvalidGraph:
                continue
        raise GenerationFailure(f"no connected Erdős–Rényi graph (K={K}, p={p}) after {ER_MAX_ATTEMPTS} attempts")
    raise InvalidConfig(f"unknown topology kind {kind!r}")


@dataclass(frozen=True)
class TreeTopology:
    """Spanning tree rooted at the updating node.

    ``parent`` maps every non-root node to its neighbour on the path towards
    the root; ``branch_of`` maps it to the root neighbour whose subtree
    (after cutting the link to the root) contains it.
    """

    root: int
    num_nodes: int
    edges: frozenset
    parent: dict
    branch_of: dict
    neighbor_sets: dict

    @property
    def root_neighbors(self):
        return self.neighbor_sets[self.root]

    def children(self, k):
        return tuple(l for l in self.neighbor_sets[k] if self.parent.get(l) == k)

    def branch(self, n):
        """Sorted members of the branch hanging off root neighbour ``n``."""
        return tuple(k for k in range(1, self.num_nodes + 1) if self.branch_of.get(k) == n)

    def depth(self, k):
        d = 0
        while k != self.root:
            k = self.parent[k]
            d += 1
        return d


def prune_to_tree(graph, q):
    """Shortest-path tree rooted at ``q``; ties go to the lowest-index parent."""
    if not 1 <= q <= graph.num_nodes:
        raise InvalidGraph(f"root {q} outside 1..{graph.num_nodes}")
    adjacency = {k: graph.neighbors(k) for k in graph.nodes}
    dist = _bfs_distances(graph.num_nodes, adjacency, q)
    if len(dist) != graph.num_nodes:
        raise InvalidGraph("graph is not connected")
    parent = {}
    for k in graph.nodes:
        if k == q:
            continue
        parent[k] = min(l for l in adjacency[k] if dist[l] == dist[k] - 1)
    edges = frozenset(_norm_edge(k, p) for k, p in parent.items())
    nbrs = {k: [] for k in graph.nodes}
    for k, l in edges:
        nbrs[k].append(l)
        nbrs[l].append(k)
    branch_of = {}
    for k in sorted(parent, key=dist.__getitem__):
        p = parent[k]
        branch_of[k] = k if p == q else branch_of[p]
    return TreeTopology(
        root=q,
        num_nodes=graph.num_nodes,
        edges=edges,
        parent=parent,
        branch_of=branch_of,
        neighbor_sets={k: tuple(sorted(v)) for k, v in nbrs.items()},
    )


def gather_schedule(tree):
    """Leaf-to-root list of directed ``(sender, receiver)`` transfers.

    Post-order walk from the root with children visited in ascending order,
    so every node sends only after all of its children have.
    """
    order = []
    stack = [(tree.root, False)]
    while stack:
        k, expanded = stack.pop()
        if expanded:
            if k != tree.root:
                order.append((k, tree.parent[k]))
            continue
        stack.append((k, True))
        for child in reversed(tree.children(k)):
            stack.append((child, False))
    return order


def scatter_schedule(tree):
    """Root-to-leaf transfers: the gather schedule reversed and flipped."""
    return [(r, s) for s, r in reversed(gather_schedule(tree))]


@dataclass
class LinkCostLedger:
    """Per directed link counters of scalars and messages.

    ``open`` restricts subsequent transfers to the edges of one tree and
    starts a fresh per-iteration tally; run-wide totals keep accumulating.
    """

    scalars_sent: dict = field(default_factory=dict)
    messages_sent: dict = field(default_factory=dict)
    iteration_scalars: dict = field(default_factory=dict)
    _active: frozenset = frozenset()

    def open(self, tree):
        self._active = frozenset(e for k, l in tree.edges for e in ((k, l), (l, k)))
        self.iteration_scalars = {}

    def record(self, edge, scalars):
        edge = (int(edge[0]), int(edge[1]))
        if edge not in self._active:
            raise AccountingError(f"transfer over {edge}, which is not a link of the current tree")
        if scalars < 0:
            raise AccountingError("negative scalar count")
        if scalars == 0:
            return self
        self.scalars_sent[edge] = self.scalars_sent.get(edge, 0) + int(scalars)
        self.messages_sent[edge] = self.messages_sent.get(edge, 0) + 1
        self.iteration_scalars[edge] = self.iteration_scalars.get(edge, 0) + int(scalars)
        return self

    def total_scalars(self):
        return sum(self.scalars_sent.values())

    def sent_by(self, k, iteration_only=True):
        counts = self.iteration_scalars if iteration_only else self.scalars_sent
        return sum(v for (s, _), v in counts.items() if s == k)

    def received_by(self, k, iteration_only=True):
        counts = self.iteration_scalars if iteration_only else self.scalars_sent
        return sum(v for (_, r), v in counts.items() if r == k)


def record_transfer(ledger, edge, scalars):
    return ledger.record(edge, scalars)
