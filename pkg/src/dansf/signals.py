"""Network-wide signal model, per-node slicing and second-order statistics.

Signals are stored time-last: a batch is an ``M x N`` array with one column
per sample. Rows are stacked node by node following a :class:`ChannelLayout`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfig


@dataclass(frozen=True)
class ChannelLayout:
    per_node_channels: tuple

    def __post_init__(self):
        chans = tuple(int(m) for m in self.per_node_channels)
        if not chans or min(chans) < 1:
            raise InvalidConfig("every node needs at least one channel")
        object.__setattr__(self, "per_node_channels", chans)

    @classmethod
    def uniform(cls, K, M_k):
        return cls((M_k,) * K)

    @property
    def num_nodes(self):
        return len(self.per_node_channels)

    @property
    def offsets(self):
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.per_node_channels)[:-1]]))

    @property
    def total(self):
        return sum(self.per_node_channels)

    def rows(self, k):
        if not 1 <= k <= self.num_nodes:
            raise IndexError(f"node {k} outside 1..{self.num_nodes}")
        start = self.offsets[k - 1]
        return slice(start, start + self.per_node_channels[k - 1])


def node_rows(x, k, layout):
    """Row block of node ``k`` (its ``M_k`` channels) of a stacked array."""
    if isinstance(x, SignalBatch):
        x = x.data
    return x[layout.rows(k)]


@dataclass(frozen=True)
class MixtureModel:
    """``y(t) = A d(t) + n(t)`` with i.i.d. zero-mean Gaussian entries.

    ``var_d`` and ``var_n`` are variances (not standard deviations).
    """

    A: np.ndarray
    var_d: float = 0.5
    var_n: float = 0.1

    def __post_init__(self):
        if self.var_d <= 0 or self.var_n < 0:
            raise InvalidConfig("need var_d > 0 and var_n >= 0")

    @property
    def M(self):
        return self.A.shape[0]

    @property
    def Q(self):
        return self.A.shape[1]


def random_mixture(layout, Q, seed=None, var_a=0.2, var_d=0.5, var_n=0.1):
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, np.sqrt(var_a), size=(layout.total, Q))
    return MixtureModel(A, var_d, var_n)


@dataclass(frozen=True)
class SignalBatch:
    """``M x N`` block of the network-wide signal.

    ``latent`` optionally holds the matching ``Q x N`` source samples ``d(t)``;
    it serves as the shared target from which node-specific MMSE targets are
    mixed. ``exact`` marks a synthetic batch whose second moments reproduce
    the analytic statistics exactly (see :func:`exact_batch`).
    """

    data: np.ndarray
    layout: ChannelLayout
    latent: np.ndarray | None = None
    exact: bool = False

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise InvalidConfig("batch must be a 2-D array with at least one sample")
        if self.data.shape[0] != self.layout.total:
            raise InvalidConfig(f"batch has {self.data.shape[0]} rows, layout expects {self.layout.total}")
        if self.latent is not None and self.latent.shape[1] != self.data.shape[1]:
            raise InvalidConfig("latent samples must align with the batch")

    @property
    def N(self):
        return self.data.shape[1]

    def node(self, k):
        return self.data[self.layout.rows(k)]


@dataclass(frozen=True)
class CovarianceEstimate:
    R: np.ndarray
    kind: str  # "exact" or "sampled"
    N: int | None = None

    def cholesky_ok(self):
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError:
            return False
        return True


def sample_batch(model, layout, N, rng_seed=None):
    """Draw ``N`` i.i.d. samples of ``A d + n``; the sources go into ``latent``."""
    if N < 1:
        raise InvalidConfig("N must be positive")
    if model.M != layout.total:
        raise InvalidConfig("mixing matrix rows do not match the channel layout")
    rng = np.random.default_rng(rng_seed)
    d = rng.normal(0.0, np.sqrt(model.var_d), size=(model.Q, N))
    n = rng.normal(0.0, np.sqrt(model.var_n), size=(model.M, N))
    return SignalBatch(model.A @ d + n, layout, latent=d)


def exact_covariance(model):
    R = model.var_d * model.A @ model.A.T + model.var_n * np.eye(model.M)
    return CovarianceEstimate(R, "exact")


def exact_cross_covariance(model):
    """``E[y d^T] = var_d A``."""
    return model.var_d * model.A


def exact_batch(model, layout):
    """Deterministic pseudo-batch whose 1/N second moments are exact.

    Columns are a scaled square-root factor of the joint covariance of
    ``(y, d)``, so ``Y Y^T / N`` equals ``R_yy`` and ``Y D^T / N`` equals
    ``R_yd`` up to rounding. This lets the exact-statistics mode reuse the
    sample-based data path unchanged.
    """
    M, Q = model.M, model.Q
    P = Q + M
    y_factor = np.hstack([np.sqrt(model.var_d) * model.A, np.sqrt(model.var_n) * np.eye(M)])
    d_factor = np.hstack([np.sqrt(model.var_d) * np.eye(Q), np.zeros((Q, M))])
    scale = np.sqrt(P)
    return SignalBatch(scale * y_factor, layout, latent=scale * d_factor, exact=True)


def batch_from_covariance(R, layout):
    """Exact pseudo-batch for a bare covariance (no latent sources)."""
    L = np.linalg.cholesky(R)
    return SignalBatch(np.sqrt(R.shape[0]) * L, layout, exact=True)


def sample_covariance(batch):
    Y = batch.data
    R = Y @ Y.T / Y.shape[1]
    return CovarianceEstimate(R, "exact" if batch.exact else "sampled", None if batch.exact else Y.shape[1])


def second_moment(a, b, N):
    return a @ b.T / N


def default_ridge(R, sampled):
    if not sampled:
        return 0.0
    return 1e-10 * np.trace(R) / R.shape[0]


def regularize(R, delta):
    if delta:
        return R + delta * np.eye(R.shape[0])
    return R


_HEADER = struct.Struct("<QQ")


def write_batch(batch, path):
    """Binary dump: little-endian ``(M, N)`` header, then column-major float64."""
    data = np.asarray(batch.data if isinstance(batch, SignalBatch) else batch, dtype="<f8")
    M, N = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(M, N))
        fh.write(np.asfortranarray(data).tobytes(order="F"))


def read_batch(path, layout=None):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("batch file too short for header")
    M, N = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 8 * M * N:
        raise ValueError(f"batch file holds {len(body)} payload bytes, header promises {8 * M * N}")
    data = np.frombuffer(body, dtype="<f8").reshape((M, N), order="F").astype(float)
    if layout is None:
        return data
    return SignalBatch(data, layout)
