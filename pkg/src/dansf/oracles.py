"""Independent numerical reference solvers.

These deliberately avoid the Cholesky-based closed forms in
:mod:`dansf.problems` and the tree bookkeeping in :mod:`dansf.network`, so
they can be used to check them.
"""
from __future__ import annotations

import numpy as np


def projected_gradient_trace_qclp(R, B, tol=1e-13, max_iter=10_000):
    """Minimise ``trace(X^T B)`` s.t. ``trace(X^T R X) <= 1`` by projected gradient.

    Works in whitened coordinates ``W = S X`` with ``S = Lambda^{1/2} V^T``
    from an eigendecomposition, where the feasible set is the unit
    Frobenius ball and projection is a rescale.
    """
    lam, V = np.linalg.eigh(R)
    S_inv = V / np.sqrt(lam)
    G = S_inv.T @ B
    step = 1.0 / max(np.linalg.norm(G), 1e-300)
    W = np.zeros_like(G)
    for _ in range(max_iter):
        W_new = W - step * G
        nrm = np.linalg.norm(W_new)
        if nrm > 1:
            W_new /= nrm
        if np.linalg.norm(W_new - W) < tol:
            W = W_new
            break
        W = W_new
    return S_inv @ W


def lstsq_mmse(R, R_yd):
    """Normal equations ``R X = R_yd`` through SVD least squares."""
    return np.linalg.lstsq(R, R_yd, rcond=None)[0]


def kkt_lcmv(R, B, H):
    """Solve the LCMV KKT system ``[[2R, B], [B^T, 0]] [X; Lambda] = [0; H^T]``."""
    M, L = B.shape
    Q = H.shape[0]
    K = np.block([[2 * R, B], [B.T, np.zeros((L, L))]])
    rhs = np.vstack([np.zeros((M, Q)), H.T])
    return np.linalg.solve(K, rhs)[:M]


def kkt_stationarity_trace_qclp(R, B, X):
    """Residual of ``B + 2 mu R X = 0`` with the best ``mu``, plus the multiplier."""
    RX = R @ X
    mu = -np.sum(B * RX) / (2 * np.sum(RX * RX))
    return np.linalg.norm(B + 2 * mu * RX) / np.linalg.norm(B), mu


def branch_members(num_nodes, tree_edges, root):
    """Root-neighbour subtrees found by flood fill after deleting the root."""
    adj = {k: set() for k in range(1, num_nodes + 1)}
    for k, l in tree_edges:
        adj[k].add(l)
        adj[l].add(k)
    members = {}
    for n in sorted(adj[root]):
        seen, frontier = {n}, [n]
        while frontier:
            k = frontier.pop()
            for l in adj[k]:
                if l != root and l not in seen:
                    seen.add(l)
                    frontier.append(l)
        members[n] = seen
    return members


def random_tree_edges(num_nodes, rng):
    """Uniform labelled tree from a random Prüfer sequence (nodes ``1..n``)."""
    if num_nodes == 1:
        return []
    if num_nodes == 2:
        return [(1, 2)]
    seq = list(rng.integers(1, num_nodes + 1, size=num_nodes - 2))
    degree = [1] * (num_nodes + 1)
    for s in seq:
        degree[s] += 1
    edges = []
    for s in seq:
        leaf = min(k for k in range(1, num_nodes + 1) if degree[k] == 1)
        edges.append((int(leaf), int(s)))
        degree[leaf] -= 1
        degree[s] -= 1
    u, v = [k for k in range(1, num_nodes + 1) if degree[k] == 1]
    edges.append((u, v))
    return edges
