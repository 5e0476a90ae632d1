import math

import numpy as np
import pandas as pd
import pytest

from netsim.bounds import NegBinomial
from netsim.experiments import (ExperimentConfig, check_sweep_steps, dominance_oracle_test, fit_loglog,
                                ks_distance, prevalence_histogram, records_frame, run_replicated,
                                step_size_sweep, summary_frame, write_sweep_csv, yule_depth,
                                yule_oracle_test)
from netsim.desEngine import run_des, state_at
from netsim.graph import GraphSpec, make_torus, tree_size
from netsim.process import InfectionState, InitSpec, ProcessParams, random_initial_state

SMALL_TORUS = GraphSpec(kind="torus", width=6, height=6)


def _config(**kwargs):
    base = dict(graph_spec=SMALL_TORUS, params=ProcessParams("SI", 1.0), init=InitSpec(0.1),
                replications=20, h_values=(0.1, 0.05), master_seed=1)
    base.update(kwargs)
    return ExperimentConfig(**base)


@pytest.mark.parametrize("kwargs", [
    dict(mode="fast"),
    dict(replications=0),
    dict(workers=0),
    dict(h_values=(0.1, 0.0)),
    dict(h_values=()),
    dict(t_end=0.0),
    dict(step_policy="round"),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        _config(**kwargs)


def test_des_mode_needs_no_step_size():
    assert _config(mode="des", h_values=()).mode == "des"


def test_dts_run_summary():
    result = run_replicated(_config())
    assert len(result.records) == 60
    assert result.n == 36
    labels = [row.label for row in result.summary]
    assert labels == ["DES", "DTS: h=0.1", "DTS: h=0.05"]
    des, coarse, fine = result.summary
    assert des.prev_diff is None and des.h is None
    assert coarse.time_steps == 10
    assert fine.time_steps == 20
    assert des.time_steps == des.events
    prevs = records_frame(result.records)
    des_mean = prevs.loc[prevs["algorithm"] == "DES", "prevalence"].mean()
    assert coarse.prev_diff == pytest.approx(abs(des_mean - coarse.mean_prevalence))
    frame = summary_frame(result.summary, "Lattice", "SI")
    assert list(frame.columns) == ["graph", "process", "algorithm", "events", "time_steps",
                                   "cpu_time_s", "prev_diff"]


def test_prevalence_gap_uses_des_at_last_dts_time():
    cfg = _config(h_values=(0.3, 0.1))
    result = run_replicated(cfg)
    frame = records_frame(result.records)
    coarse = frame[frame["h"] == 0.3]
    assert coarse["des_prevalence"].notna().all()
    assert frame.loc[frame["h"] == 0.1, "des_prevalence"].isna().all()

    g = SMALL_TORUS.build()
    x0 = random_initial_state(g, InitSpec(0.1, seed=[1, 4, 0]))
    logged = run_des(g, cfg.params, x0, 1.0, np.random.default_rng([1, 4, 1]))
    rep4 = coarse.loc[coarse["rep"] == 4, "des_prevalence"].iloc[0]
    assert rep4 == state_at(logged, cfg.dts_config(0.3).end_time).prevalence

    row = next(r for r in result.summary if r.h == 0.3)
    gap = abs(coarse["des_prevalence"].mean() - coarse["prevalence"].mean())
    assert row.prev_diff == pytest.approx(gap)
    hist = prevalence_histogram(result.records, result.n)
    matched = hist[(hist["algorithm"] == "DES") & (hist["h"] == 0.3)]
    assert matched["count"].sum() == 20
    assert not ((hist["algorithm"] == "DES") & (hist["h"] == 0.1)).any()


def test_partial_final_compares_at_t_end():
    result = run_replicated(_config(h_values=(0.3,), step_policy="partial-final"))
    assert records_frame(result.records)["des_prevalence"].isna().all()
    des, dts = result.summary
    assert dts.time_steps == 4
    assert dts.prev_diff == pytest.approx(abs(des.mean_prevalence - dts.mean_prevalence))


def test_records_do_not_depend_on_workers():
    serial = records_frame(run_replicated(_config(replications=16)).records)
    pooled = records_frame(run_replicated(_config(replications=16, workers=2)).records)
    columns = ["rep", "algorithm", "h", "prevalence", "events", "steps", "timers"]
    pd.testing.assert_frame_equal(serial[columns], pooled[columns])


def test_master_seed_changes_records():
    a = records_frame(run_replicated(_config(master_seed=1)).records)
    b = records_frame(run_replicated(_config(master_seed=2)).records)
    assert not a["prevalence"].equals(b["prevalence"])


def test_coupled_run():
    result = run_replicated(_config(mode="coupled", params=ProcessParams("SIS", 1.0, 0.2)))
    algorithms = {r.algorithm for r in result.records}
    assert algorithms == {"DES-coupled", "DTS-coupled"}
    assert sorted(result.paths) == [0.05, 0.1]
    assert all(len(paths) == 20 for paths in result.paths.values())
    labels = [row.label for row in result.summary]
    assert "DTS-coupled: h=0.1" in labels and "DES-coupled: h=0.05" in labels


def test_coupled_si_paths_dominate():
    result = run_replicated(_config(mode="coupled"))
    assert all(path.dominance_ok for paths in result.paths.values() for path in paths)


def test_regenerated_small_world():
    spec = GraphSpec(kind="small-world", width=6, height=6, target_degree=5, seed=3)
    result = run_replicated(_config(graph_spec=spec, regenerate_graph=True, replications=5))
    assert len(result.records) == 15


def test_prevalence_histogram_counts():
    result = run_replicated(_config())
    hist = prevalence_histogram(result.records, result.n)
    assert list(hist.columns) == ["algorithm", "h", "prevalence", "count"]
    totals = hist.groupby(["algorithm", hist["h"].fillna(-1.0)])["count"].sum()
    assert set(totals.tolist()) == {20}
    assert np.allclose(hist["prevalence"] * 36, np.round(hist["prevalence"] * 36))


def test_sweep_step_checks():
    with pytest.raises(ValueError, match="3 distinct"):
        check_sweep_steps((0.01, 0.1))
    with pytest.raises(ValueError, match="3 distinct"):
        check_sweep_steps((0.1, 0.1, 0.1))
    with pytest.raises(ValueError, match="decade"):
        check_sweep_steps((0.01, 0.02, 0.05))
    check_sweep_steps((0.01, 0.05, 0.1))
    with pytest.raises(ValueError):
        step_size_sweep(_config(mode="des", h_values=(0.01, 0.05, 0.1)))


def test_fit_loglog():
    fit = fit_loglog([0.01, 0.1, 1.0], [0.001, 0.01, 0.1])
    assert fit.slope == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(-1.0)
    assert fit_loglog([0.01, 0.1, 1.0], [0.0, 0.01, 0.1]) is None


def test_degenerate_sweep(tmp_path):
    cfg = _config(init=InitSpec(1.0), h_values=(0.01, 0.05, 0.1), replications=4)
    sweep = step_size_sweep(cfg)
    assert sweep.degenerate
    assert math.isnan(sweep.slope)
    assert sweep.gaps.tolist() == [0.0, 0.0, 0.0]
    path = tmp_path / "sweep.csv"
    write_sweep_csv(sweep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "h,mean_gap,stderr"
    assert lines[-1] == "# slope=nan,intercept=nan"


def test_coupled_sweep(tmp_path):
    cfg = _config(mode="coupled", h_values=(0.02, 0.05, 0.1, 0.2), replications=30)
    sweep = step_size_sweep(cfg)
    assert sweep.mode == "coupled"
    assert sweep.h_values.tolist() == [0.02, 0.05, 0.1, 0.2]
    assert np.all(sweep.gaps >= 0)
    assert np.all(sweep.gaps <= 1)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(sweep, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 6
    assert lines[-1].startswith("# slope=")


@pytest.mark.slow
@pytest.mark.parametrize("params", [ProcessParams("SI", 1.0), ProcessParams("SIS", 1.0, 0.2)])
def test_coupled_error_is_first_order(params):
    cfg = _config(graph_spec=GraphSpec(kind="torus", width=30, height=30), params=params, mode="coupled",
                  h_values=(0.005, 0.01, 0.02, 0.05, 0.1), replications=500, workers=2)
    sweep = step_size_sweep(cfg)
    assert not sweep.degenerate
    assert 0.7 <= sweep.slope <= 1.3


def test_ks_distance():
    assert ks_distance(np.zeros(50, dtype=int), NegBinomial(2.0, 0.0)) == 0.0
    d = NegBinomial(1.0, 0.5)
    # all mass at 0 against a geometric law: gap 1 - 0.5 at y = 0
    assert ks_distance(np.zeros(10, dtype=int), d) == pytest.approx(0.5)


def test_yule_depth_keeps_leaves_out_of_reach():
    depth = yule_depth(2, 4, 0.3)
    assert depth == 7
    assert tree_size(2, 4, depth) == 1 + 2 * (3 ** 7 - 1) // 2


@pytest.mark.parametrize("m,k,t", [(2, 4, 0.3), (3, 3, 0.5)])
def test_yule_oracle(m, k, t):
    report = yule_oracle_test(m, k, t, replications=2000, seed=1)
    assert report.passed
    assert report.statistic < report.threshold
    sd = math.sqrt(NegBinomial(m / (k - 2), 1 - math.exp(-(k - 2) * t)).variance)
    assert report.mean == pytest.approx(report.expected_mean, abs=4 * sd / math.sqrt(2000))


def test_yule_oracle_geometric_case():
    report = yule_oracle_test(1, 3, math.log(2), replications=2000, seed=2)
    assert report.expected_mean == pytest.approx(1.0)
    assert report.passed


def test_yule_oracle_rejects_shallow_tree():
    with pytest.raises(RuntimeError, match="deeper tree"):
        yule_oracle_test(2, 4, 0.3, replications=200, depth=1)


def test_yule_oracle_at_time_zero():
    report = yule_oracle_test(2, 4, 0.0, replications=10)
    assert report.passed
    assert report.expected_mean == 0.0


@pytest.mark.slow
@pytest.mark.parametrize("m,k,t", [(2, 4, 0.3), (3, 3, 0.5), (4, 4, 0.2)])
def test_yule_oracle_at_scale(m, k, t):
    assert yule_oracle_test(m, k, t, replications=10 ** 5, seed=3).passed


def test_dominance_oracle():
    g = make_torus(10, 10)
    x0 = random_initial_state(g, InitSpec(0.3, seed=4))
    report = dominance_oracle_test(g, x0, 0.1, replications=1000, seed=5)
    assert report.passed
    assert report.mean <= report.expected_mean


def test_dominance_oracle_from_empty_state():
    g = make_torus(5, 5)
    report = dominance_oracle_test(g, InfectionState.susceptible(25), 0.1, replications=10)
    assert report.passed
    assert report.mean == 0.0


def test_dominance_oracle_rejects_bad_inputs():
    g = make_torus(5, 5)
    with pytest.raises(ValueError):
        dominance_oracle_test(g, InfectionState.from_nodes(25, [0]), 0.0, replications=10)


TABLE = [
    # graph, process, DES events, DTS events at h = 0.01 and 0.0215, prevalence gaps at both
    ("torus", ProcessParams("SIS", 1.0, 0.2), (525.4, 517.4, 505.1), (0.004, 0.012)),
    ("torus", ProcessParams("SI", 1.0), (464.6, 461.9, 449.2), (0.002, 0.012)),
    ("small-world", ProcessParams("SIS", 1.0, 0.2), (757.8, 744.6, 731.6), (0.013, 0.014)),
    ("small-world", ProcessParams("SI", 1.0), (660.9, 655.2, 644.0), (0.005, 0.014)),
]


@pytest.mark.slow
@pytest.mark.parametrize("kind,params,events,gaps", TABLE)
def test_comparison_table(kind, params, events, gaps):
    spec = GraphSpec(kind=kind, width=30, height=30, target_degree=5 if kind == "small-world" else 4)
    cfg = ExperimentConfig(graph_spec=spec, params=params, init=InitSpec(0.1), replications=1500,
                           h_values=(0.01, 0.0215), master_seed=11, workers=2)
    result = run_replicated(cfg)
    des, fine, coarse = result.summary
    assert fine.time_steps == 100 and coarse.time_steps == 46
    assert des.events == pytest.approx(events[0], rel=0.03)
    assert fine.events == pytest.approx(events[1], rel=0.03)
    assert coarse.events == pytest.approx(events[2], rel=0.03)
    assert -0.01 < 1 - fine.events / des.events <= 0.08
    assert fine.prev_diff == pytest.approx(gaps[0], abs=0.006)
    assert coarse.prev_diff == pytest.approx(gaps[1], abs=0.006)
