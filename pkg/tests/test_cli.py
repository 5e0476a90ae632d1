import pandas as pd
import pytest

from main import main
from netsim import graph as graph_module
from netsim.process import InfectionState

SMALL = ["--kind", "torus", "--width", "6", "--height", "6"]


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["run", *SMALL, "--replications", "3", "--h", "0.1,0.05", "--out-dir", str(out), *extra])
    return code, out


def _records(out):
    return pd.read_csv(out / "records.csv").drop(columns=["wall_seconds"])


def test_bounds_to_file(tmp_path):
    path = tmp_path / "bounds.csv"
    assert main(["bounds", "--n", "900", "--k", "4", "--T", "1", "--h", "0.01,2", "--output", str(path)]) == 0
    lines = path.read_text().splitlines()
    assert lines[0] == "process,n,k,mu,T,h,C,K,bound,vacuous"
    assert lines[1].startswith("SI,900,4,")
    assert lines[1].endswith(",true")
    assert lines[2].endswith(",,,,error")
    frame = pd.read_csv(path)
    assert frame["bound"].iloc[0] == pytest.approx(14257.4, rel=1e-4)


def test_bounds_to_stdout(capsys):
    assert main(["bounds", "--process", "SIS", "--mu", "0", "--h", "0.01"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "process,n,k,mu,T,h,C,K,bound,vacuous"
    assert out[1].startswith("SIS,900,4,")


def test_generate_torus(tmp_path, capsys):
    path = tmp_path / "torus.txt"
    assert main(["generate-graph", "--kind", "torus", "--width", "30", "--height", "30",
                 "--output", str(path)]) == 0
    lines = path.read_text().splitlines()
    assert lines[0] == "n 900"
    assert len(lines) == 1801
    assert "n=900 edges=1800 k=4" in capsys.readouterr().out


def test_generate_small_world(tmp_path):
    path = tmp_path / "sw.txt"
    assert main(["generate-graph", "--kind", "small-world", "--width", "30", "--height", "30",
                 "--degree", "5", "--seed", "7", "--output", str(path)]) == 0
    assert len(path.read_text().splitlines()) == 2251


def test_generate_rejects_tiny_torus(tmp_path, capsys):
    path = tmp_path / "tiny.txt"
    assert main(["generate-graph", "--kind", "torus", "--width", "2", "--height", "2",
                 "--output", str(path)]) == 2
    assert "width >= 3" in capsys.readouterr().err
    assert not path.exists()


def test_verify_unknown_suite():
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "everything"])
    assert exc.value.code == 2


def test_verify_lemmas(capsys):
    assert main(["verify", "--suite", "lemmas"]) == 0
    out = capsys.readouterr().out
    assert "PASS lemmas/s2-grid" in out
    assert "FAIL" not in out


def test_run_writes_artifacts(tmp_path):
    code, out = _run(tmp_path, "a")
    assert code == 0
    for name in ("records.csv", "summary.csv", "costs.csv", "histogram.csv"):
        assert (out / name).exists()
    summary = pd.read_csv(out / "summary.csv")
    assert summary["algorithm"].tolist() == ["DES", "DTS: h=0.1", "DTS: h=0.05"]
    assert summary["graph"].iloc[0] == "Lattice"
    assert len(_records(out)) == 9


WALL_CLOCK = {"records.csv": "wall_seconds", "summary.csv": "cpu_time_s"}


@pytest.mark.parametrize("mode", ["dts", "coupled"])
def test_run_is_deterministic(tmp_path, mode):
    _, first = _run(tmp_path, "a", "--seed", "3", "--mode", mode, "--dump-trajectory")
    _, second = _run(tmp_path, "b", "--seed", "3", "--mode", mode, "--dump-trajectory")
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    assert "histogram.csv" in names and "costs.csv" in names
    for name in names:
        if name in WALL_CLOCK:
            a = pd.read_csv(first / name).drop(columns=[WALL_CLOCK[name]])
            b = pd.read_csv(second / name).drop(columns=[WALL_CLOCK[name]])
            pd.testing.assert_frame_equal(a, b)
        else:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_coupled_run_traces(tmp_path):
    out = tmp_path / "coupled"
    assert main(["run", *SMALL, "--mode", "coupled", "--h", "0.1", "--replications", "3",
                 "--out-dir", str(out)]) == 0
    lines = (out / "error_trace.csv").read_text().splitlines()
    assert lines[0] == "rep,step,time,eps_l1,d_l1,dominance_ok"
    assert len(lines) == 31
    assert all(line.endswith(",true") for line in lines[1:])


def test_coupled_run_trace_per_step_size(tmp_path):
    code, out = _run(tmp_path, "coupled", "--mode", "coupled")
    assert code == 0
    assert (out / "error_trace_h0.1.csv").exists()
    assert (out / "error_trace_h0.05.csv").exists()


def test_flags_override_config(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("# small lattice\nrun.replications = 4\nseed = 5\nrun.h = 0.2\n")
    _, from_config = _run(tmp_path, "a", "--config", str(config), "--replications", "2")
    records = _records(from_config)
    assert records["rep"].max() == 1
    assert set(records["h"].dropna()) == {0.1, 0.05}
    _, explicit = _run(tmp_path, "b", "--replications", "2", "--seed", "5")
    pd.testing.assert_frame_equal(records, _records(explicit))


def test_config_beats_environment_seed(tmp_path, monkeypatch):
    config = tmp_path / "run.conf"
    config.write_text("seed = 5\n")
    monkeypatch.setenv("NETSIM_SEED", "9")
    _, from_config = _run(tmp_path, "a", "--config", str(config))
    monkeypatch.delenv("NETSIM_SEED")
    _, explicit = _run(tmp_path, "b", "--seed", "5")
    pd.testing.assert_frame_equal(_records(from_config), _records(explicit))


def test_environment_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("NETSIM_SEED", "11")
    _, from_env = _run(tmp_path, "a")
    monkeypatch.delenv("NETSIM_SEED")
    _, explicit = _run(tmp_path, "b", "--seed", "11")
    pd.testing.assert_frame_equal(_records(from_env), _records(explicit))


def test_bad_environment_seed(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("NETSIM_SEED", "eleven")
    code, _ = _run(tmp_path, "a")
    assert code == 2
    assert "NETSIM_SEED" in capsys.readouterr().err


@pytest.mark.parametrize("text,message", [
    ("run.speed = 3\n", "unknown key"),
    ("run.replications 3\n", "key = value"),
    ("seed = 1\nseed = 2\n", "given twice"),
    ("run.replications = three\n", "bad value"),
])
def test_bad_config(tmp_path, capsys, text, message):
    config = tmp_path / "bad.conf"
    config.write_text(text)
    code, _ = _run(tmp_path, "a", "--config", str(config))
    assert code == 2
    assert message in capsys.readouterr().err


def test_missing_config(tmp_path):
    code, _ = _run(tmp_path, "a", "--config", str(tmp_path / "nope.conf"))
    assert code == 3


def test_invalid_mode(tmp_path):
    code, _ = _run(tmp_path, "a", "--mode", "fast")
    assert code == 2


def test_graph_file(tmp_path):
    graph = tmp_path / "sw6.txt"
    assert main(["generate-graph", "--kind", "small-world", "--width", "6", "--height", "6",
                 "--degree", "5", "--seed", "2", "--output", str(graph)]) == 0
    code, out = _run(tmp_path, "a", "--graph-file", str(graph))
    assert code == 0
    assert pd.read_csv(out / "summary.csv")["graph"].iloc[0] == "sw6"
    code, _ = _run(tmp_path, "b", "--graph-file", str(tmp_path / "missing.txt"))
    assert code == 3


def test_dump_trajectory(tmp_path):
    code, out = _run(tmp_path, "a", "--dump-trajectory")
    assert code == 0
    assert (out / "trajectory.csv").read_text().startswith("time,node,kind")
    prevalence = pd.read_csv(out / "prevalence.csv")
    assert len(prevalence) == 11
    states = pd.read_csv(out / "states.csv", dtype={"state": str})
    assert list(states.columns) == ["step", "time", "state"]
    last = InfectionState.from_hex(states["state"].iloc[-1], 36)
    assert last.prevalence == pytest.approx(prevalence["prevalence"].iloc[-1])


def test_dump_trajectory_follows_replication_zero_graph(tmp_path):
    out = tmp_path / "regen"
    assert main(["run", "--kind", "small-world", "--width", "6", "--height", "6", "--degree", "5",
                 "--regenerate-graph", "--replications", "3", "--h", "0.1", "--seed", "4",
                 "--out-dir", str(out), "--dump-trajectory"]) == 0
    records = pd.read_csv(out / "records.csv")
    rep0 = records[records["rep"] == 0].set_index("algorithm")
    assert len(pd.read_csv(out / "trajectory.csv")) == rep0.loc["DES", "events"]
    prevalence = pd.read_csv(out / "prevalence.csv")
    assert prevalence["prevalence"].iloc[-1] == pytest.approx(rep0.loc["DTS", "prevalence"])


def test_sweep(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", *SMALL, "--prevalence", "1.0", "--h", "0.01,0.05,0.1", "--replications", "2",
                 "--out-dir", str(out)]) == 0
    assert "slope undefined" in capsys.readouterr().out
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "h,mean_gap,stderr"
    assert lines[-1].startswith("# slope=")


@pytest.mark.parametrize("extra", [["--mode", "des"], ["--h", "0.01,0.05"]])
def test_sweep_rejects_bad_setup(tmp_path, extra):
    out = tmp_path / "sweep"
    assert main(["sweep", *SMALL, "--replications", "2", "--out-dir", str(out), *extra]) == 2


def test_generate_reports_stalled_small_world(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(graph_module, "_add_random_edges", lambda G, target_degree, rng: False)
    path = tmp_path / "sw.txt"
    assert main(["generate-graph", "--kind", "small-world", "--width", "6", "--height", "6",
                 "--degree", "5", "--output", str(path)]) == 2
    assert "stalled" in capsys.readouterr().err
    assert not path.exists()
