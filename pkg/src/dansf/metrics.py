"""Convergence measurements and Monte-Carlo aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetric

NOT_REACHED = None


def relative_mse(X, X_star):
    """``||X - X*||_F^2 / ||X*||_F^2``; raw matrices, no alignment."""
    X, X_star = np.asarray(X), np.asarray(X_star)
    if X.shape != X_star.shape:
        raise UndefinedMetric(f"shape mismatch {X.shape} vs {X_star.shape}")
    denom = np.sum(X_star**2)
    if denom == 0:
        raise UndefinedMetric("oracle solution is zero")
    return float(np.sum((X - X_star) ** 2) / denom)


@dataclass(frozen=True)
class ConvergenceCurve:
    """``values[i, k-1]`` is the metric of node ``k`` after row ``i``."""

    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("curve must be iterations x nodes")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_records(cls, records, metric="mse", **metadata):
        if not records:
            return cls(np.zeros((0, 0)), metadata)
        return cls(np.vstack([getattr(r, metric) for r in records]), metadata)

    @property
    def num_iterations(self):
        return self.values.shape[0]

    @property
    def num_nodes(self):
        return self.values.shape[1]

    def worst(self):
        """Per-row maximum over nodes."""
        if self.values.size == 0:
            return np.zeros(self.values.shape[0])
        return self.values.max(axis=1)

    def node(self, k):
        return self.values[:, k - 1]


def check_monotone(curve, rel_tol=1e-9):
    """``(k, i)`` pairs where node ``k``'s value rises from row ``i`` to ``i+1``."""
    v = curve.values
    if v.shape[0] < 2:
        return []
    prev, nxt = v[:-1], v[1:]
    bad = nxt > prev + rel_tol * (1.0 + np.abs(prev))
    return [(int(k) + 1, int(i)) for i, k in zip(*np.nonzero(bad))]


def iterations_to_threshold(curve, threshold, offset=0):
    """First row where the worst node is at or below ``threshold``.

    Returns :data:`NOT_REACHED` (``None``) when no row qualifies. ``offset``
    is added to the row index, e.g. 1 when row 0 holds the state after the
    first iteration.
    """
    series = curve.worst() if isinstance(curve, ConvergenceCurve) else np.asarray(curve, dtype=float)
    hit = np.flatnonzero(series <= threshold)
    if hit.size == 0:
        return NOT_REACHED
    return int(hit[0]) + offset


@dataclass(frozen=True)
class McSummary:
    median: np.ndarray
    q1: np.ndarray
    q3: np.ndarray
    iterations_to_threshold: tuple = ()

    def rows(self):
        for i, (m, a, b) in enumerate(zip(self.median, self.q1, self.q3)):
            yield i, m, a, b


def pad_runs(curves):
    length = max(len(c) for c in curves)
    out = np.empty((len(curves), length))
    for r, c in enumerate(curves):
        c = np.asarray(c, dtype=float)
        out[r, : len(c)] = c
        out[r, len(c) :] = c[-1] if len(c) else np.nan
    return out


def mc_aggregate(curves, threshold=None, offset=0):
    """Pointwise median and quartiles over runs of equal-meaning series.

    Each element of ``curves`` is a 1-D series (or a :class:`ConvergenceCurve`,
    reduced to its worst node). Runs that stopped early are padded with their
    last value.
    """
    if not curves:
        raise ValueError("no runs to aggregate")
    series = [c.worst() if isinstance(c, ConvergenceCurve) else np.asarray(c, dtype=float) for c in curves]
    stacked = pad_runs(series)
    q1, med, q3 = np.percentile(stacked, [25, 50, 75], axis=0)
    its = ()
    if threshold is not None:
        its = tuple(iterations_to_threshold(s, threshold, offset) for s in series)
    return McSummary(med, q1, q3, its)


def median_iterations(counts):
    """Median of iterations-to-threshold with unreached runs counted as infinite."""
    vals = np.array([np.inf if c is None else c for c in counts], dtype=float)
    return float(np.median(vals))
