"""Experiment configuration and Monte-Carlo orchestration.

Every run ``r`` derives its seeds from ``(master_seed, r)``, so the mixing
model, the problem family, the random graph and the compressor
initialisation are shared across topologies within a sweep and identical
across repeated invocations.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import EngineConfig, Simulation
from .errors import InvalidConfig
from .metrics import ConvergenceCurve, mc_aggregate, median_iterations
from .network import NetworkGraph, generate_topology, read_topology
from .plot import Series, render_svg
from .problems import get_problem, make_coupled_family
from .signals import ChannelLayout, random_mixture

log = logging.getLogger(__name__)

TOPOLOGIES = ("fully_connected", "erdos_renyi", "line")
SHORT_NAMES = {"fully_connected": "FC", "erdos_renyi": "Rand", "line": "Line", "file": "File", "single": "Single"}
RAW_HEADER = ["run", "iter", "q", "node", "cost", "feas_residual", "mse", "scalars_up", "scalars_down"]


@dataclass(frozen=True)
class ExperimentConfig:
    K: int = 10
    Q: int = 3
    M: int | tuple = 7
    topology: str = "fully_connected"
    p: float | None = None
    topology_file: str | None = None
    problem: str = "trace_qclp"
    L: int | None = None
    mode: str = "exact"
    N: int = 10_000
    max_iterations: int | None = None
    mc_runs: int = 20
    master_seed: int = 0
    out: str = "results"
    mse_threshold: float = 1e-6
    iteration_threshold: float = 1e-4
    early_stop: float | None = None
    var_a: float = 0.2
    var_d: float = 0.5
    var_n: float = 0.1
    compressor_update: str = "shared"
    debug: bool = False

    def __post_init__(self):
        if isinstance(self.M, list):
            object.__setattr__(self, "M", tuple(self.M))
        for name in ("K", "Q", "N", "mc_runs"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise InvalidConfig("max_iterations must be non-negative")
        if isinstance(self.M, tuple):
            if len(self.M) != self.K:
                raise InvalidConfig(f"M lists {len(self.M)} nodes, K = {self.K}")
            if min(self.M) < 1:
                raise InvalidConfig("every M_k must be positive")
        elif self.M < 1:
            raise InvalidConfig("M must be positive")
        if self.topology not in TOPOLOGIES + ("file",):
            raise InvalidConfig(f"unknown topology {self.topology!r}")
        if self.topology == "file" and not self.topology_file:
            raise InvalidConfig("topology 'file' needs topology_file")
        get_problem(self.problem)
        EngineConfig(mode=self.mode, N=self.N, compressor_update=self.compressor_update)

    @property
    def layout(self):
        if isinstance(self.M, tuple):
            return ChannelLayout(self.M)
        return ChannelLayout.uniform(self.K, self.M)

    @property
    def iterations(self):
        return 30 * self.K if self.max_iterations is None else self.max_iterations

    def engine_config(self):
        return EngineConfig(
            max_iterations=self.iterations,
            mode=self.mode,
            N=self.N,
            compressor_update=self.compressor_update,
            debug=self.debug,
            early_stop=self.early_stop,
        )

    def to_dict(self):
        d = dataclasses.asdict(self)
        if isinstance(d["M"], tuple):
            d["M"] = list(d["M"])
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def with_overrides(self, pairs):
        """Apply ``key=value`` strings; values are parsed as JSON when possible."""
        d = self.to_dict()
        for pair in pairs:
            if "=" not in pair:
                raise InvalidConfig(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
            key = key.strip()
            if key not in d:
                raise InvalidConfig(f"unknown config key {key!r}")
            try:
                d[key] = json.loads(raw)
            except json.JSONDecodeError:
                d[key] = raw
        return self.from_dict(d)

    def check_block_size(self):
        if self.mode != "sampled":
            return
        layout = self.layout
        m_tilde = max(layout.per_node_channels) + (self.K - 1) * self.Q
        if self.N < m_tilde:
            warnings.warn(f"N={self.N} is below the largest local dimension {m_tilde}; local covariances may be singular")


def run_seeds(master_seed, run_index):
    return [int(s) for s in np.random.SeedSequence([master_seed, run_index]).generate_state(4)]


def build_graph(config, seed, topology=None):
    topology = topology or config.topology
    if config.K == 1:
        return NetworkGraph(1, frozenset())
    if topology == "file":
        g = read_topology(config.topology_file)
        if g.num_nodes != config.K:
            raise InvalidConfig(f"topology file has {g.num_nodes} nodes, K = {config.K}")
        return g
    p = config.p if topology == "erdos_renyi" else None
    return generate_topology(topology, config.K, seed=seed, p=p)


def build_run(config, run_index, topology=None):
    model_seed, family_seed, graph_seed, engine_seed = run_seeds(config.master_seed, run_index)
    layout = config.layout
    model = random_mixture(layout, config.Q, model_seed, config.var_a, config.var_d, config.var_n)
    family = make_coupled_family(config.problem, config.K, config.Q, layout, model, family_seed, L=config.L)
    graph = build_graph(config, graph_seed, topology)
    return Simulation(config.engine_config(), graph, family, model, engine_seed)


def simulate(args):
    config, run_index, topology = args
    return build_run(config, run_index, topology).run()


def simulate_many(config, topology=None, runs=None, jobs=1):
    """Records of every Monte-Carlo run, ordered by run index."""
    runs = config.mc_runs if runs is None else runs
    tasks = [(config, r, topology) for r in range(runs)]
    if jobs <= 1 or runs == 1:
        return [simulate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(simulate, tasks))


def raw_csv(all_records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_HEADER)
    for run_index, records in enumerate(all_records):
        for rec in records:
            for k in range(len(rec.mse)):
                w.writerow([
                    run_index, rec.i + 1, rec.q, k + 1,
                    repr(float(rec.cost[k])), repr(float(rec.feasibility[k])), repr(float(rec.mse[k])),
                    int(rec.scalars_up[k]), int(rec.scalars_down[k]),
                ])
    return buf.getvalue()


def summary_csv(summary):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "median", "q1", "q3"])
    for i, m, a, b in summary.rows():
        w.writerow([i + 1, repr(float(m)), repr(float(a)), repr(float(b))])
    return buf.getvalue()


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def worst_curves(all_records):
    return [ConvergenceCurve.from_records(recs).worst() for recs in all_records]


def run_experiment(config, jobs=1):
    """Run ``mc_runs`` simulations of one topology and write raw/summary/plot files."""
    config.check_block_size()
    out = Path(config.out)
    all_records = simulate_many(config, jobs=jobs)
    name = config.topology
    summary = mc_aggregate(worst_curves(all_records), threshold=config.iteration_threshold, offset=1)
    paths = {
        "raw": out / f"raw_{name}.csv",
        "summary": out / f"summary_{name}_mse_max.csv",
        "plot": out / f"mse_{name}.svg",
        "config": out / "config.json",
    }
    write_atomic(paths["raw"], raw_csv(all_records))
    write_atomic(paths["summary"], summary_csv(summary))
    write_atomic(paths["plot"], render_svg([_series(name, summary)], title=f"max_k MSE, {SHORT_NAMES.get(name, name)}"))
    write_atomic(paths["config"], config.to_json() + "\n")
    final = float(summary.median[-1]) if len(summary.median) else float("nan")
    log.info("%s: final median max-node MSE %.3e", name, final)
    return paths


def _series(name, summary):
    its = np.arange(1, len(summary.median) + 1)
    return Series(SHORT_NAMES.get(name, name), its, summary.median, summary.q1, summary.q3)


def sweep_topologies(config, jobs=1, topologies=TOPOLOGIES):
    """Same runs on every topology; writes per-topology files plus a comparison table."""
    config.check_block_size()
    out = Path(config.out)
    series, rows, medians = [], [], {}
    paths = {}
    for topo in topologies:
        all_records = simulate_many(config, topology=topo, jobs=jobs)
        summary = mc_aggregate(worst_curves(all_records), threshold=config.iteration_threshold, offset=1)
        paths[f"raw_{topo}"] = out / f"raw_{topo}.csv"
        paths[f"summary_{topo}"] = out / f"summary_{topo}_mse_max.csv"
        write_atomic(paths[f"raw_{topo}"], raw_csv(all_records))
        write_atomic(paths[f"summary_{topo}"], summary_csv(summary))
        series.append(_series(topo, summary))
        medians[topo] = median_iterations(summary.iterations_to_threshold)
        for r, n in enumerate(summary.iterations_to_threshold):
            rows.append([topo, r, "not_reached" if n is None else n])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["topology", "run", "iterations_to_threshold"])
    w.writerows(rows)
    for topo in topologies:
        m = medians[topo]
        w.writerow([topo, "median", "not_reached" if np.isinf(m) else repr(m)])
    paths["comparison"] = out / "comparison.csv"
    paths["plot"] = out / "sweep.svg"
    paths["config"] = out / "config.json"
    write_atomic(paths["comparison"], buf.getvalue())
    write_atomic(paths["plot"], render_svg(series, title="median of max_k MSE across runs"))
    write_atomic(paths["config"], config.to_json() + "\n")
    return paths, medians
