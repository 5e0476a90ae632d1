"""Replication harness: DES/DTS comparisons, step-size sweeps and the
negative binomial oracles.

Seeds are derived per replication from the master seed:
    initial state   [master, rep, 0]
    DES             [master, rep, 1]
    DTS (h index q) [master, rep, 2, q]
    coupled         master seed (master, q), replication rep
so records do not depend on the number of workers.
"""

import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from .bounds import dominating_law, nb_mean, yule_law
from .coupling import cdf_dominance, run_coupled
from .desEngine import run_des
from .dtsEngine import DtsConfig, run_dts
from .graph import GraphSpec, make_tree, max_tree_nodes, tree_leaves, tree_size
from .process import InfectionState, InitSpec, ProcessParams, random_initial_state

logger = logging.getLogger(__name__)

MODES = ("des", "dts", "coupled")
leaf_hit_limit = 1e-3       # tolerated fraction of Yule runs reaching the truncation depth
leaf_union_bound = 1e-4     # target for the a-priori leaf-hit bound when choosing depth
ks_slack = 1.5


@dataclass(frozen=True)
class ExperimentConfig:
    graph_spec: GraphSpec = field(default_factory=GraphSpec)
    params: ProcessParams = field(default_factory=ProcessParams)
    init: InitSpec = field(default_factory=InitSpec)
    t_end: float = 1.0
    replications: int = 1500
    h_values: Tuple[float, ...] = (0.01, 0.0215)
    mode: str = "dts"
    master_seed: int = 0
    step_policy: str = "truncate"
    workers: int = 1
    regenerate_graph: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError("Unknown mode %r (%s)" % (self.mode, ", ".join(MODES)))
        if self.replications < 1:
            raise ValueError("replications must be >= 1, got %d" % self.replications)
        if self.mode != "des" and not self.h_values:
            raise ValueError("Mode %s needs at least one step size" % self.mode)
        if self.workers < 1:
            raise ValueError("workers must be >= 1, got %d" % self.workers)
        if not self.t_end > 0:
            raise ValueError("t_end must be positive, got %r" % self.t_end)
        for h in self.h_values:
            DtsConfig(h, self.t_end, self.step_policy)

    def dts_config(self, h):
        return DtsConfig(h, self.t_end, self.step_policy)


@dataclass(frozen=True)
class ReplicationRecord:
    rep: int
    algorithm: str          # DES, DTS, DES-coupled, DTS-coupled
    h: Optional[float]
    prevalence: float
    events: int
    steps: int
    wall_seconds: float
    timers: int = 0
    des_prevalence: Optional[float] = None  # DES at this DTS's last observation, when before t_end


@dataclass(frozen=True)
class SummaryRow:
    label: str
    algorithm: str
    h: Optional[float]
    events: float
    time_steps: float
    cpu_time_s: float
    prev_diff: Optional[float]
    timers: float
    mean_prevalence: float

    @property
    def timers_per_event(self):
        return self.timers / self.events if self.events else float("nan")


@dataclass
class RunResult:
    config: ExperimentConfig
    records: List[ReplicationRecord]
    summary: List[SummaryRow]
    paths: Dict[float, list] = field(default_factory=dict)
    n: int = 0


def _graph_seed(spec, rep):
    return int(np.random.SeedSequence([int(spec.seed), int(rep)]).generate_state(1)[0])


_worker = {}


def _init_worker(graph, cfg):
    _worker["graph"] = graph
    _worker["cfg"] = cfg


def replication_graph(spec, rep):
    """The graph replication rep runs on when graphs are regenerated per replication."""
    return spec.build(seed=_graph_seed(spec, rep))


def _run_replication(rep):
    cfg = _worker["cfg"]
    g = _worker["graph"]
    if g is None:
        g = replication_graph(cfg.graph_spec, rep)
    p = cfg.params
    seed = int(cfg.master_seed)
    x0 = random_initial_state(g, InitSpec(cfg.init.prevalence, seed=[seed, rep, 0]))
    records = []
    paths = []

    ends = {}
    if cfg.mode == "dts":
        ends = {h: cfg.dts_config(h).end_time for h in cfg.h_values}
    marks = [end for end in ends.values() if end < cfg.t_end]

    if cfg.mode in ("des", "dts"):
        start = time.perf_counter()
        tr = run_des(g, p, x0, cfg.t_end, np.random.default_rng([seed, rep, 1]), keep_events=False,
                     checkpoints=marks)
        matched = {end: state.prevalence for end, state in tr.checkpoints.items()}
        records.append(ReplicationRecord(rep, "DES", None, tr.final.prevalence, tr.events_total,
                                         tr.steps, time.perf_counter() - start, tr.timers_created))
    if cfg.mode == "dts":
        for q, h in enumerate(cfg.h_values):
            start = time.perf_counter()
            tr = run_dts(g, p, x0, cfg.dts_config(h), np.random.default_rng([seed, rep, 2, q]),
                         keep_states=False)
            records.append(ReplicationRecord(rep, "DTS", h, tr.final.prevalence, tr.events_total,
                                             tr.steps, time.perf_counter() - start, tr.timers_created,
                                             matched.get(ends[h])))
    if cfg.mode == "coupled":
        for q, h in enumerate(cfg.h_values):
            start = time.perf_counter()
            path = run_coupled(g, p, x0, cfg.dts_config(h), (seed, q), rep=rep, keep_states=False)
            wall = time.perf_counter() - start
            records.append(ReplicationRecord(rep, "DES-coupled", h, path.final_true.prevalence,
                                             path.des_events, path.des_events, wall))
            records.append(ReplicationRecord(rep, "DTS-coupled", h, path.final_approx.prevalence,
                                             path.dts_events, path.steps, wall, path.timers_created))
            paths.append(path)
    return records, paths, g.n


def _label(algorithm, h):
    if algorithm == "DES":
        return "DES"
    if algorithm == "DTS":
        return "DTS: h=%g" % h
    return "%s: h=%g" % (algorithm, h)


def summarize(records):
    """Mean events/steps/CPU per (algorithm, h).

    DTS rows carry |mean prev DES - mean prev DTS| with the DES read at the
    DTS's last observation time (floor(t_end / h) h under truncate).
    """
    frame = records_frame(records)
    frame["h_key"] = frame["h"].fillna(-1.0)
    grouped = frame.groupby(["algorithm", "h_key"], sort=False)
    means = grouped[["events", "steps", "wall_seconds", "timers", "prevalence", "des_prevalence"]].mean()
    des_prev = None
    if "DES" in means.index.get_level_values("algorithm"):
        des_prev = float(means.xs("DES", level="algorithm")["prevalence"].iloc[0])

    rows = []
    for (algorithm, h_key), row in means.iterrows():
        h = None if h_key < 0 else float(h_key)
        diff = None
        if algorithm == "DTS" and not pd.isna(row["des_prevalence"]):
            diff = abs(row["des_prevalence"] - row["prevalence"])
        elif algorithm == "DTS" and des_prev is not None:
            diff = abs(des_prev - row["prevalence"])
        elif algorithm == "DTS-coupled":
            diff = abs(means.loc[("DES-coupled", h_key), "prevalence"] - row["prevalence"])
        rows.append(SummaryRow(label=_label(algorithm, h), algorithm=algorithm, h=h,
                               events=float(row["events"]), time_steps=float(row["steps"]),
                               cpu_time_s=float(row["wall_seconds"]), prev_diff=diff,
                               timers=float(row["timers"]), mean_prevalence=float(row["prevalence"])))
    return rows


def run_replicated(cfg, progress=False):
    """Run every replication of cfg and summarize.

    Replications run in a process pool when cfg.workers > 1; results are
    collected in replication order either way.
    """
    graph = None if cfg.regenerate_graph else cfg.graph_spec.build()
    return run_replicated_on(graph, cfg, progress=progress)


def run_replicated_on(graph, cfg, progress=False):
    """run_replicated with a prebuilt graph (None regenerates one per replication)."""
    start = time.perf_counter()
    reps = range(cfg.replications)
    bar = dict(total=cfg.replications, disable=not progress, file=sys.stderr, desc=cfg.mode)
    if cfg.workers == 1:
        _init_worker(graph, cfg)
        results = [_run_replication(rep) for rep in tqdm(reps, **bar)]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker,
                                 initargs=(graph, cfg)) as executor:
            results = list(tqdm(executor.map(_run_replication, reps, chunksize=8), **bar))

    records = [r for recs, _, _ in results for r in recs]
    paths = {}
    for _, rep_paths, _ in results:
        for path in rep_paths:
            paths.setdefault(path.h, []).append(path)
    summary = summarize(records)
    logger.info("%d %s replications done in %.3f seconds", cfg.replications, cfg.mode,
                time.perf_counter() - start)
    _log_speedup(summary)
    return RunResult(config=cfg, records=records, summary=summary, paths=paths, n=results[0][2])


def _log_speedup(summary):
    des = [row for row in summary if row.algorithm == "DES"]
    if not des or des[0].cpu_time_s <= 0:
        return
    for row in summary:
        if row.algorithm == "DTS" and row.cpu_time_s > 0:
            logger.info("DTS h=%g runs %.1fx faster than DES (%.4f s vs %.4f s per replication)",
                        row.h, des[0].cpu_time_s / row.cpu_time_s, row.cpu_time_s, des[0].cpu_time_s)


RECORD_COLUMNS = ["rep", "algorithm", "h", "prevalence", "events", "steps", "wall_seconds"]


def records_frame(records):
    frame = pd.DataFrame([(r.rep, r.algorithm, r.h, r.prevalence, r.events, r.steps,
                           r.wall_seconds, r.timers, r.des_prevalence) for r in records],
                         columns=RECORD_COLUMNS + ["timers", "des_prevalence"])
    frame["des_prevalence"] = frame["des_prevalence"].astype(float)
    return frame


def summary_frame(summary, graph_label, process):
    return pd.DataFrame([(graph_label, process, row.label, row.events, row.time_steps,
                          row.cpu_time_s, row.prev_diff) for row in summary],
                        columns=["graph", "process", "algorithm", "events", "time_steps",
                                 "cpu_time_s", "prev_diff"])


def cost_frame(summary, graph_label, process):
    return pd.DataFrame([(graph_label, process, row.label, row.timers, row.timers_per_event)
                         for row in summary],
                        columns=["graph", "process", "algorithm", "timers", "timers_per_event"])


def prevalence_histogram(records, n):
    """Terminal prevalence counts per (algorithm, h) in bins of width 1/n.

    DES rows with h set hold the DES at that DTS's last observation time
    when it falls before t_end.
    """
    frame = records_frame(records)
    matched = frame.loc[frame["algorithm"].eq("DTS") & frame["des_prevalence"].notna()]
    if len(matched):
        matched = matched.assign(algorithm="DES", prevalence=matched["des_prevalence"])
        frame = pd.concat([frame, matched], ignore_index=True)
    frame["prevalence"] = (frame["prevalence"] * n).round().astype(np.int64) / n
    frame["h_key"] = frame["h"].fillna(-1.0)
    counts = frame.groupby(["algorithm", "h_key", "prevalence"], sort=False).size()
    hist = counts.reset_index(name="count").sort_values(["algorithm", "h_key", "prevalence"])
    hist["h"] = hist["h_key"].where(hist["h_key"] >= 0)
    return hist[["algorithm", "h", "prevalence", "count"]].reset_index(drop=True)


@dataclass
class SweepResult:
    mode: str
    h_values: np.ndarray
    gaps: np.ndarray
    stderrs: np.ndarray
    slope: float
    intercept: float
    slope_stderr: float = float("nan")
    intercept_stderr: float = float("nan")
    degenerate: bool = False

    def frame(self):
        return pd.DataFrame({"h": self.h_values, "mean_gap": self.gaps, "stderr": self.stderrs},
                            columns=["h", "mean_gap", "stderr"])


def fit_loglog(h_values, gaps):
    """Least squares line through (log10 h, log10 gap); None when a gap is zero."""
    h_values = np.asarray(h_values, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if np.any(gaps <= 0):
        return None
    return stats.linregress(np.log10(h_values), np.log10(gaps))


def check_sweep_steps(h_values):
    distinct = sorted(set(float(h) for h in h_values))
    if len(distinct) < 3:
        raise ValueError("Slope fit needs at least 3 distinct step sizes, got %s" % distinct)
    if distinct[-1] / distinct[0] < 10 * (1 - 1e-9):
        raise ValueError("Step sizes must span at least one decade, got %g..%g"
                         % (distinct[0], distinct[-1]))


def step_size_sweep(cfg, progress=False, graph=None):
    """Mean error per step size and a log-log slope fit.

    dts mode: |mean prevalence DES - mean prevalence DTS| against a common DES
    baseline. coupled mode: mean |eps_M| / n over coupled replications.
    """
    if cfg.mode == "des":
        raise ValueError("A step-size sweep needs mode dts or coupled")
    check_sweep_steps(cfg.h_values)
    if graph is None and not cfg.regenerate_graph:
        graph = cfg.graph_spec.build()
    result = run_replicated_on(graph, cfg, progress=progress)
    frame = records_frame(result.records)
    R = cfg.replications
    h_values, gaps, errs = [], [], []
    if cfg.mode == "dts":
        des_final = frame.loc[frame["algorithm"] == "DES", "prevalence"].to_numpy()
        for h in cfg.h_values:
            rows = frame.loc[(frame["algorithm"] == "DTS") & (frame["h"] == h)]
            dts = rows["prevalence"].to_numpy()
            matched = rows["des_prevalence"]
            des = matched.to_numpy() if matched.notna().all() else des_final
            h_values.append(h)
            gaps.append(abs(des.mean() - dts.mean()))
            errs.append(math.sqrt(des.var(ddof=1) / R + dts.var(ddof=1) / R) if R > 1 else float("nan"))
    else:
        for h in cfg.h_values:
            eps = np.array([path.records[-1].eps_l1 if path.records else 0
                            for path in result.paths[h]], dtype=float) / result.n
            h_values.append(h)
            gaps.append(eps.mean())
            errs.append(eps.std(ddof=1) / math.sqrt(R) if R > 1 else float("nan"))

    fit = fit_loglog(h_values, gaps)
    if fit is None:
        logger.warning("Zero error at some step size; slope fit is undefined")
        return SweepResult(cfg.mode, np.array(h_values), np.array(gaps), np.array(errs),
                           float("nan"), float("nan"), degenerate=True)
    logger.info("Sweep slope %.3f (stderr %.3f), intercept %.3f", fit.slope, fit.stderr, fit.intercept)
    return SweepResult(cfg.mode, np.array(h_values), np.array(gaps), np.array(errs),
                       float(fit.slope), float(fit.intercept), float(fit.stderr),
                       float(fit.intercept_stderr))


def write_sweep_csv(sweep, path):
    """`h,mean_gap,stderr` rows, then one `# slope=...,intercept=...` footer line."""
    sweep.frame().to_csv(path, index=False, float_format="%.9g")
    with open(path, "a", newline="\n") as f:
        f.write("# slope=%.9g,intercept=%.9g\n" % (sweep.slope, sweep.intercept))


@dataclass(frozen=True)
class OracleReport:
    name: str
    passed: bool
    statistic: float
    threshold: float
    replications: int
    mean: float
    expected_mean: float
    detail: str = ""


def ks_distance(samples, law, top=None):
    """sup_y |F_n(y) - F(y)| over integers y, for a count law with a .cdf method."""
    samples = np.asarray(samples, dtype=np.int64)
    top = int(samples.max()) if top is None else max(int(top), int(samples.max()))
    empirical = np.cumsum(np.bincount(samples, minlength=top + 1)) / samples.size
    reference = law.cdf(np.arange(top + 1))
    return float(np.max(np.abs(empirical - reference)))


def yule_depth(m, k, t):
    """Smallest depth whose leaves are reached by time t with probability
    below leaf_union_bound, by a union bound over leaves (reaching a given
    depth-d node takes a Gamma(d, 1) time)."""
    depth = 1
    while True:
        leaves = m * (k - 1) ** (depth - 1)
        if leaves * stats.gamma.cdf(t, depth) < leaf_union_bound:
            return depth
        depth += 1
        if tree_size(m, k, depth) > max_tree_nodes:
            raise ValueError("No tree below %d nodes keeps leaves out of reach for m=%d, k=%d, t=%g"
                             % (max_tree_nodes, m, k, t))


def yule_oracle_test(m, k, t, replications, seed=0, depth=None):
    """New infections by t on the (m, k) tree from the root only, against
    NB(m/(k-2), 1 - e^{-(k-2)t}) by KS distance."""
    if t < 0:
        raise ValueError("t must be nonnegative, got %r" % t)
    law = yule_law(m, k, t)
    threshold = 1.63 / math.sqrt(replications) * ks_slack
    if t == 0:
        return OracleReport("yule m=%d k=%d t=%g" % (m, k, t), True, 0.0, threshold,
                            replications, 0.0, nb_mean(law))
    depth = yule_depth(m, k, t) if depth is None else depth
    g = make_tree(m, k, depth)
    leaves = tree_leaves(m, k, depth)
    logger.debug("Yule oracle m=%d k=%d t=%g on depth %d (%d nodes)", m, k, t, depth, g.n)
    p = ProcessParams("SI", 1.0)
    x0 = InfectionState.from_nodes(g.n, [0])
    counts = np.empty(replications, dtype=np.int64)
    hits = 0
    for rep in range(replications):
        tr = run_des(g, p, x0, t, np.random.default_rng([seed, rep]), keep_events=False)
        counts[rep] = tr.final.count - 1
        hits += bool(tr.final.bits[leaves].any())
    if hits / replications >= leaf_hit_limit:
        raise RuntimeError("%d of %d runs reached depth %d; use a deeper tree"
                           % (hits, replications, depth))
    stat = ks_distance(counts, law, top=law.support_limit())
    return OracleReport("yule m=%d k=%d t=%g" % (m, k, t), stat < threshold, stat, threshold,
                        replications, float(counts.mean()), nb_mean(law),
                        "depth=%d leaf_hits=%d" % (depth, hits))


def dominance_oracle_test(g, x0, t, replications, seed=0, allowance=0.02):
    """Empirical CDF of new SI infections by t stays above the CDF of
    NB(|x0| k/(k-2), 1 - e^{-(k-2)t}), less allowance, at every integer."""
    if g.k <= 2:
        raise ValueError("Negative binomial dominance needs k > 2, got k=%d" % g.k)
    if not t > 0:
        raise ValueError("t must be positive, got %r" % t)
    p = ProcessParams("SI", 1.0)
    counts = np.empty(replications, dtype=np.int64)
    for rep in range(replications):
        tr = run_des(g, p, x0, t, np.random.default_rng([seed, rep]), keep_events=False)
        counts[rep] = tr.final.count - x0.count
    if x0.count == 0:
        law_mean = 0.0
        report = cdf_dominance(counts, lambda y: 1.0, allowance)
    else:
        law = dominating_law(x0.count, g.k, t)
        law_mean = nb_mean(law)
        report = cdf_dominance(counts, law.cdf, allowance)
    return OracleReport("dominance |x0|=%d t=%g" % (x0.count, t), report.ok, report.worst_gap,
                        allowance, replications, float(counts.mean()), law_mean,
                        "worst at y=%d" % report.worst_at)
