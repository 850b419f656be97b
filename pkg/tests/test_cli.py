import csv
import json
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dansf.cli import EXIT_IO, EXIT_SOLVER, EXIT_USAGE, main
from dansf.errors import InvalidConfig
from dansf.experiment import RAW_HEADER, ExperimentConfig, run_experiment, sweep_topologies
from dansf.network import generate_topology, write_topology
from dansf.plot import PlotParseError, Series, plot, read_summary, render_svg


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def small(tmp_path, **kw):
    base = dict(K=4, Q=2, M=3, mode="exact", mc_runs=2, max_iterations=12, master_seed=1, out=str(tmp_path))
    base.update(kw)
    return ExperimentConfig(**base)


# -- config ---------------------------------------------------------------------

def test_config_roundtrip():
    cfg = ExperimentConfig(K=3, M=(2, 3, 4), topology="line", p=0.3, N=500, early_stop=1e-9)
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 12), st.integers(1, 4), st.integers(1, 9),
    st.sampled_from(["fully_connected", "erdos_renyi", "line"]),
    st.sampled_from(["trace_qclp", "mmse", "lcmv"]),
    st.sampled_from(["exact", "sampled"]), st.integers(0, 2**63 - 1),
)
def test_config_roundtrip_property(K, Q, M, topo, prob, mode, seed):
    cfg = ExperimentConfig(K=K, Q=Q, M=M, topology=topo, problem=prob, mode=mode, master_seed=seed)
    assert ExperimentConfig.from_dict(json.loads(cfg.to_json())) == cfg


def test_config_validation():
    with pytest.raises(InvalidConfig):
        ExperimentConfig(K=0)
    with pytest.raises(InvalidConfig):
        ExperimentConfig(K=2, M=(3,))
    with pytest.raises(InvalidConfig):
        ExperimentConfig(topology="ring")
    with pytest.raises(InvalidConfig):
        ExperimentConfig(problem="ica")
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({"K": 3, "colour": 1})
    with pytest.raises(InvalidConfig):
        ExperimentConfig().with_overrides(["K"])


def test_overrides_parse_json_values():
    cfg = ExperimentConfig().with_overrides(["K=5", "M=[1,2,3,4,5]", "topology=line", "early_stop=1e-8"])
    assert cfg.K == 5 and cfg.M == (1, 2, 3, 4, 5) and cfg.topology == "line" and cfg.early_stop == 1e-8


def test_small_block_warns():
    with pytest.warns(UserWarning):
        ExperimentConfig(K=10, M=7, mode="sampled", N=20).check_block_size()


# -- run / sweep ------------------------------------------------------------------

def test_run_writes_outputs(tmp_path):
    paths = run_experiment(small(tmp_path))
    rows = _rows(paths["raw"])
    assert rows[0] == RAW_HEADER
    assert len(rows) == 1 + 2 * 12 * 4
    assert rows[1][:4] == ["0", "1", "1", "1"]
    summary = _rows(paths["summary"])
    assert summary[0] == ["iter", "median", "q1", "q3"] and len(summary) == 13
    assert paths["plot"].read_text().startswith("<svg")
    assert ExperimentConfig.from_json(paths["config"].read_text()) == small(tmp_path)


def test_run_is_deterministic(tmp_path):
    a = run_experiment(small(tmp_path / "a", topology="erdos_renyi"))["raw"].read_bytes()
    b = run_experiment(small(tmp_path / "b", topology="erdos_renyi"))["raw"].read_bytes()
    assert a == b


def test_parallel_matches_serial(tmp_path):
    a = run_experiment(small(tmp_path / "a"), jobs=1)["raw"].read_bytes()
    b = run_experiment(small(tmp_path / "b"), jobs=2)["raw"].read_bytes()
    assert a == b


def test_single_node_run(tmp_path):
    paths = run_experiment(small(tmp_path, K=1, M=4, max_iterations=1, mc_runs=1))
    row = _rows(paths["summary"])[1]
    assert row[0] == "1" and float(row[1]) <= 1e-10


def test_reference_fully_connected_summary(tmp_path):
    cfg = ExperimentConfig(K=10, Q=3, M=7, problem="trace_qclp", mode="exact", topology="fully_connected",
                           mc_runs=20, max_iterations=300, master_seed=2024, out=str(tmp_path))
    final = float(_rows(run_experiment(cfg)["summary"])[-1][1])
    assert final <= 1e-6


def test_sweep_k2_topologies_coincide(tmp_path):
    paths, medians = sweep_topologies(small(tmp_path, K=2, mc_runs=2))
    raws = [
        [r[1:] for r in _rows(paths[f"raw_{t}"])]
        for t in ("fully_connected", "erdos_renyi", "line")
    ]
    assert raws[0] == raws[1] == raws[2]
    assert len(set(medians.values())) == 1


def test_sweep_threshold_above_start(tmp_path):
    paths, medians = sweep_topologies(small(tmp_path, iteration_threshold=1e6))
    rows = [r for r in _rows(paths["comparison"])[1:] if r[1] != "median"]
    assert rows and all(r[2] == "1" for r in rows)
    assert set(medians.values()) == {1.0}
    assert paths["plot"].read_text().count("<polyline") == 3


# -- plot ---------------------------------------------------------------------------

def test_plot_empty_series():
    svg = render_svg([Series("x", np.array([]), np.array([]))])
    assert svg.startswith("<svg") and "<polyline" not in svg and "ytick" in svg


def test_plot_three_points(tmp_path):
    p = tmp_path / "summary_line_mse_max.csv"
    p.write_text("iter,median,q1,q3\n1,1.0,0.5,2.0\n2,0.1,0.05,0.2\n3,0.01,0.005,0.02\n")
    svg = plot([p])
    pts = re.search(r'<polyline points="([^"]+)"', svg).group(1).split()
    assert len(pts) == 3
    assert read_summary(p).label == "line_mse_max"


def test_plot_decade_ticks():
    y = np.logspace(0, -8, 9)
    svg = render_svg([Series("s", np.arange(1, 10), y)])
    ticks = re.findall(r'class="ytick"[^>]*>1e(-?\d+)<', svg)
    assert {int(t) for t in ticks} >= {0, -4, -8}


def test_plot_parse_error_has_line_number(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("iter,median,q1,q3\n1,0.1,0.1,0.1\n2,oops,0.1,0.1\n")
    with pytest.raises(PlotParseError, match="line 3"):
        read_summary(p)


# -- command line ---------------------------------------------------------------------

def test_cli_run_and_plot(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(small(tmp_path / "unused").to_json())
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--seed", "5", "--runs", "1"]) == 0
    saved = ExperimentConfig.from_json((out / "config.json").read_text())
    assert saved.master_seed == 5 and saved.mc_runs == 1
    svg = tmp_path / "p.svg"
    assert main(["plot", str(out / "summary_fully_connected_mse_max.csv"), "-o", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")


def test_cli_topology_file(tmp_path):
    topo = tmp_path / "g.txt"
    write_topology(generate_topology("line", 4), topo)
    out = tmp_path / "out"
    args = ["run", "--set", "K=4", "--set", "Q=2", "--set", "M=3", "--set", "max_iterations=4",
            "--runs", "1", "--topology-file", str(topo), "--out", str(out)]
    assert main(args) == 0
    assert (out / "raw_file.csv").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--set", "K=0", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["run", "--set", "nonsense=1", "--out", str(tmp_path)]) == EXIT_USAGE
    bad = tmp_path / "bad.csv"
    bad.write_text("iter,median\n")
    assert main(["plot", str(bad), "-o", str(tmp_path / "x.svg")]) == EXIT_USAGE
    assert main(["plot", str(tmp_path / "missing.csv"), "-o", str(tmp_path / "x.svg")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    args = ["run", "--set", "K=2", "--set", "M=2", "--set", "Q=1", "--set", "max_iterations=2", "--runs", "1",
            "--out", str(blocker / "sub")]
    assert main(args) == EXIT_IO
    # three LCMV constraints cannot be met by a 2-channel fused stream
    args = ["run", "--set", "K=3", "--set", "M=3", "--set", "Q=2", "--set", "problem=lcmv", "--set", "L=3",
            "--set", "max_iterations=2", "--runs", "1", "--out", str(tmp_path / "s")]
    assert main(args) == EXIT_SOLVER
    err = capsys.readouterr().err
    assert "iteration 0" in err


def test_cli_usage_error_from_argparse():
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--mode", "bogus"])
    assert info.value.code == 2
