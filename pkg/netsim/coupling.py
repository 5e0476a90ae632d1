"""DES and DTS driven by the same random blocks.

Step i owns a RandomBlock A_i: one Exp(1) stream per edge and one per node.
The DTS step compares the first draw of every S-I edge with beta*h; the DES
span replays the exact process over the same interval, so any edge that
fires in the DTS also fires in the DES. For SI this gives X(ih) >= X_i
along every path.

Streams are keyed by (master seed, replication, step, stream, entity,
ordinal). Ordinal 0 of all entities is one vectorised draw per step; later
ordinals (SIS reactivations within a step) come from their own generator.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from .bounds import nb_cdf, NegBinomial
from .process import InfectionState

logger = logging.getLogger(__name__)

EDGE_STREAM = 0
RECOVERY_STREAM = 1
_VECTOR_TAG = 0xFFFFFFFF    # entity slot of the ordinal-0 vectors, never a real id
_TINY = np.finfo(float).tiny


def _seed_words(seed):
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


class RandomBlock:
    """A_i: per-edge and per-node Exp(1) streams for one step of one replication.

    Attributes:
        step: step index i (1-based)
        edge_first: first draw of every edge, A_i(e)
        recovery_first: first recovery draw of every node
    """

    def __init__(self, seed, rep, step, n_edges, n_nodes):
        self.key = _seed_words(seed) + [int(rep), int(step)]
        self.step = int(step)
        self.n_edges = int(n_edges)
        self.n_nodes = int(n_nodes)
        self._edge_first = None
        self._recovery_first = None

    def _vector(self, stream, size):
        rng = np.random.default_rng(self.key + [stream, _VECTOR_TAG, 0])
        draws = np.maximum(rng.standard_exponential(size), _TINY)
        draws.setflags(write=False)
        return draws

    @property
    def edge_first(self):
        if self._edge_first is None:
            self._edge_first = self._vector(EDGE_STREAM, self.n_edges)
        return self._edge_first

    @property
    def recovery_first(self):
        if self._recovery_first is None:
            self._recovery_first = self._vector(RECOVERY_STREAM, self.n_nodes)
        return self._recovery_first

    def _redraw(self, stream, entity, ordinal):
        rng = np.random.default_rng(self.key + [stream, int(entity), int(ordinal)])
        return max(float(rng.standard_exponential()), _TINY)

    def edge_draw(self, e, ordinal):
        if ordinal == 0:
            return float(self.edge_first[e])
        return self._redraw(EDGE_STREAM, e, ordinal)

    def recovery_draw(self, i, ordinal):
        if ordinal == 0:
            return float(self.recovery_first[i])
        return self._redraw(RECOVERY_STREAM, i, ordinal)

    def __repr__(self):
        return "RandomBlock(key=%r, edges=%d, nodes=%d)" % (self.key, self.n_edges, self.n_nodes)


def _si_edges(g, bits):
    """Active (S-I) edge mask and, per edge, its susceptible endpoint."""
    u, v = g.edges[:, 0], g.edges[:, 1]
    bu, bv = bits[u], bits[v]
    active = bu != bv
    target = np.where(bu, v, u)
    return active, target


def coupled_dts_bits(g, beta, mu, bits, block, h):
    """DTS step on raw bits from block; returns (new bits, flips, S-I edges)."""
    new = bits.copy()
    flips = 0
    active, target = _si_edges(g, bits)
    if g.n_edges:
        fire = active & (block.edge_first <= beta * h)
        hit = np.unique(target[fire])
        new[hit] = True
        flips += hit.size
    if mu > 0:
        rec = np.flatnonzero(bits & (block.recovery_first <= mu * h))
        new[rec] = False
        flips += rec.size
    return new, flips, int(active.sum())


def des_span_bits(g, beta, mu, bits, block, h):
    """Exact process over [0, h] from bits, timers taken from block.

    Edges active at step start fire at A_i(e)/beta, using the same
    `A_i(e) <= beta*h` test as the DTS step. A timer started inside the step
    fires a fresh draw later: the next ordinal of its stream, which is 0 for
    an edge or node the step-start state left idle. Returns (new bits, events).
    """
    state = bits.tolist()
    adjacency = g.adjacency
    incident = g.incident
    active, target = _si_edges(g, bits)
    heap = []
    seq = 0
    edge_act = {}
    edge_ord = {}
    node_act = {}
    node_ord = {}

    # entries: (time, seq, stream, edge or node id, activation id, node to flip)
    if g.n_edges:
        for e in np.flatnonzero(active & (block.edge_first <= beta * h)).tolist():
            heap.append((min(block.edge_first[e] / beta, h), seq, EDGE_STREAM, e, 0, int(target[e])))
            seq += 1
    if mu > 0:
        for i in np.flatnonzero(bits & (block.recovery_first <= mu * h)).tolist():
            heap.append((min(block.recovery_first[i] / mu, h), seq, RECOVERY_STREAM, i, 0, i))
            seq += 1
    heapq.heapify(heap)

    def next_edge_ordinal(e):
        ordinal = edge_ord.get(e, 1 if active[e] else 0)
        edge_ord[e] = ordinal + 1
        return ordinal

    def next_node_ordinal(i):
        ordinal = node_ord.get(i, 1 if bits[i] else 0)
        node_ord[i] = ordinal + 1
        return ordinal

    def start_edge(e, node, t):
        nonlocal seq
        act = edge_act.get(e, 0) + 1
        edge_act[e] = act
        fire = t + block.edge_draw(e, next_edge_ordinal(e)) / beta
        if fire <= h:
            heapq.heappush(heap, (fire, seq, EDGE_STREAM, e, act, node))
            seq += 1

    def stop_edge(e):
        edge_act[e] = edge_act.get(e, 0) + 1

    def start_recovery(i, t):
        nonlocal seq
        act = node_act.get(i, 0) + 1
        node_act[i] = act
        fire = t + block.recovery_draw(i, next_node_ordinal(i)) / mu
        if fire <= h:
            heapq.heappush(heap, (fire, seq, RECOVERY_STREAM, i, act, i))
            seq += 1

    events = 0
    while heap:
        t, _, stream, entity, act, node = heapq.heappop(heap)
        if stream == EDGE_STREAM:
            if edge_act.get(entity, 0) != act:
                continue
            state[node] = True
            events += 1
            for w, e in zip(adjacency[node], incident[node]):
                if state[w]:
                    stop_edge(e)
                else:
                    start_edge(e, w, t)
            if mu > 0:
                start_recovery(node, t)
        else:
            if node_act.get(entity, 0) != act:
                continue
            state[node] = False
            node_act[node] = act + 1
            events += 1
            for w, e in zip(adjacency[node], incident[node]):
                if state[w]:
                    start_edge(e, node, t)
                else:
                    stop_edge(e)
    return np.array(state, dtype=bool), events


def coupled_dts_step(g, p, x, block, h):
    """g(x, A_i): one DTS step driven by the first draws of block."""
    new, _, _ = coupled_dts_bits(g, float(p.beta), float(p.recovery_rate), x.bits, block, h)
    return InfectionState(new)


def coupled_des_span(g, p, x, block, h):
    """State of the exact process at h started from x, driven by block."""
    new, _ = des_span_bits(g, float(p.beta), float(p.recovery_rate), x.bits, block, h)
    return InfectionState(new)


def increment_map_f(g, p, x, block, h):
    """f(x, A_i) = (g(x, A_i) - x) / h as a float vector."""
    new = coupled_dts_step(g, p, x, block, h)
    return (new.bits.astype(np.int64) - x.bits.astype(np.int64)) / h


@dataclass(frozen=True)
class StepRecord:
    step: int
    time: float
    eps_l1: int         # |X_i - X~_i|
    d_count: int        # |X~_i - g(X~_{i-1}, A_i)|
    h: float            # length of this step
    dominance_ok: bool

    @property
    def d_l1(self):
        return self.d_count / self.h


@dataclass
class CoupledPath:
    """Both chains of one replication at the step boundaries."""
    h: float
    rep: int
    sampled_true: List[InfectionState] = field(default_factory=list)
    approx: List[InfectionState] = field(default_factory=list)
    one_step: List[InfectionState] = field(default_factory=list)
    records: List[StepRecord] = field(default_factory=list)
    initial: Optional[InfectionState] = None
    final_true: Optional[InfectionState] = None
    final_approx: Optional[InfectionState] = None
    des_events: int = 0
    dts_events: int = 0
    timers_created: int = 0

    @property
    def steps(self):
        return len(self.records)

    @property
    def dominance_ok(self):
        return all(r.dominance_ok for r in self.records)

    def global_error(self, i):
        """eps_i = X_i - X~_i as a signed integer vector."""
        if i == 0:
            return np.zeros(self.initial.n, dtype=np.int64)
        return self.approx[i].bits.astype(np.int64) - self.sampled_true[i].bits.astype(np.int64)

    def local_error(self, i):
        """d_i = (X~_i - g(X~_{i-1}, A_i)) / h_i."""
        if i < 1:
            raise ValueError("Local errors start at step 1")
        diff = self.sampled_true[i].bits.astype(np.int64) - self.one_step[i - 1].bits.astype(np.int64)
        return diff / self.records[i - 1].h


def run_coupled(g, p, x0, cfg, master_seed, rep=0, keep_states=True):
    """Advance DES and DTS side by side from the same blocks.

    X~_i is the DES state at the end of step i, X_i the DTS state; each step
    also restarts one DTS step from X~_{i-1} for the local error. Shorter final
    steps (partial-final policy) use their own length for h.
    """
    if x0.n != g.n:
        raise ValueError("State has %d nodes, graph has %d" % (x0.n, g.n))
    beta, mu = float(p.beta), float(p.recovery_rate)
    path = CoupledPath(h=cfg.h, rep=int(rep), initial=x0)
    true_bits = x0.bits.copy()
    approx_bits = x0.bits.copy()
    if keep_states:
        path.sampled_true.append(x0)
        path.approx.append(x0)
    t = 0.0
    for i, length in enumerate(cfg.step_lengths(), start=1):
        block = RandomBlock(master_seed, rep, i, g.n_edges, g.n)
        restart, _, _ = coupled_dts_bits(g, beta, mu, true_bits, block, length)
        true_next, des_events = des_span_bits(g, beta, mu, true_bits, block, length)
        approx_next, flips, si_edges = coupled_dts_bits(g, beta, mu, approx_bits, block, length)
        t += length
        path.records.append(StepRecord(
            step=i,
            time=t,
            eps_l1=int(np.count_nonzero(approx_next != true_next)),
            d_count=int(np.count_nonzero(true_next != restart)),
            h=length,
            dominance_ok=not bool(np.any(approx_next & ~true_next)),
        ))
        path.des_events += des_events
        path.dts_events += flips
        path.timers_created += si_edges
        true_bits, approx_bits = true_next, approx_next
        if keep_states:
            path.sampled_true.append(InfectionState(true_bits))
            path.approx.append(InfectionState(approx_bits))
            path.one_step.append(InfectionState(restart))
    path.final_true = InfectionState(true_bits)
    path.final_approx = InfectionState(approx_bits)
    return path


@dataclass
class ErrorReport:
    """Per-step error statistics over a set of coupled replications."""
    h: float
    replications: int
    times: np.ndarray
    mean_eps: np.ndarray
    stderr_eps: np.ndarray
    mean_d: np.ndarray
    stderr_d: np.ndarray
    dominance_violations: int
    steps_checked: int

    @property
    def final_mean_eps(self):
        return float(self.mean_eps[-1]) if len(self.mean_eps) else 0.0


def aggregate_errors(paths):
    """Means and standard errors of |eps_i| and |d_i| per step."""
    if not paths:
        raise ValueError("Need at least one coupled path")
    steps = {path.steps for path in paths}
    if len(steps) != 1:
        raise ValueError("Coupled paths cover different step counts: %s" % sorted(steps))
    eps = np.array([[r.eps_l1 for r in path.records] for path in paths], dtype=float)
    d = np.array([[r.d_l1 for r in path.records] for path in paths], dtype=float)
    R = len(paths)
    ddof = 1 if R > 1 else 0
    violations = sum(not r.dominance_ok for path in paths for r in path.records)
    return ErrorReport(
        h=paths[0].h,
        replications=R,
        times=np.array([r.time for r in paths[0].records]),
        mean_eps=eps.mean(axis=0),
        stderr_eps=eps.std(axis=0, ddof=ddof) / math.sqrt(R),
        mean_d=d.mean(axis=0),
        stderr_d=d.std(axis=0, ddof=ddof) / math.sqrt(R),
        dominance_violations=violations,
        steps_checked=eps.size,
    )


def error_trace_frame(paths):
    rows = [(path.rep, r.step, r.time, r.eps_l1, r.d_l1, "true" if r.dominance_ok else "false")
            for path in paths for r in path.records]
    return pd.DataFrame(rows, columns=["rep", "step", "time", "eps_l1", "d_l1", "dominance_ok"])


def write_error_trace(paths, path):
    """Error trace CSV `rep,step,time,eps_l1,d_l1,dominance_ok`."""
    error_trace_frame(paths).to_csv(path, index=False, float_format="%.9g")


def lipschitz_constant(g, p):
    """L = beta*k for SI, beta*k + mu for SIS."""
    return float(p.beta) * g.k + float(p.recovery_rate)


@dataclass(frozen=True)
class LipschitzReport:
    mean: float
    stderr: float
    bound: float
    blocks: int

    @property
    def ok(self):
        return self.mean <= self.bound + 3 * self.stderr


def lipschitz_estimate(g, p, x, z, h, blocks, master_seed=0):
    """Mean of |f(x, A) - f(z, A)| over independent blocks against L |x - z|."""
    if x.n != z.n:
        raise ValueError("States have different lengths (%d vs %d)" % (x.n, z.n))
    beta, mu = float(p.beta), float(p.recovery_rate)
    xb, zb = x.bits, z.bits
    diffs = np.empty(blocks)
    for b in range(blocks):
        block = RandomBlock(master_seed, b, 1, g.n_edges, g.n)
        gx, _, _ = coupled_dts_bits(g, beta, mu, xb, block, h)
        gz, _, _ = coupled_dts_bits(g, beta, mu, zb, block, h)
        fx = gx.astype(np.int64) - xb.astype(np.int64)
        fz = gz.astype(np.int64) - zb.astype(np.int64)
        diffs[b] = np.abs(fx - fz).sum() / h
    stderr = float(diffs.std(ddof=1) / math.sqrt(blocks)) if blocks > 1 else 0.0
    bound = lipschitz_constant(g, p) * int(np.count_nonzero(xb != zb))
    return LipschitzReport(float(diffs.mean()), stderr, bound, blocks)


@dataclass(frozen=True)
class StabilityReport:
    ok: bool
    worst_ratio: float      # max_i mean|eps_i| / (K_i max_{j<=i} mean|d_j|)
    worst_step: int


def zero_stability_check(report, L):
    """mean|eps_i| <= K_i * max_{j<=i} mean|d_j| at every step,
    K_i = (exp(L t_i) - 1) / L with t_i the time of step i."""
    worst, worst_step = 0.0, 0
    running = 0.0
    for i, (t, eps, d) in enumerate(zip(report.times, report.mean_eps, report.mean_d), start=1):
        running = max(running, float(d))
        K = math.expm1(L * t) / L if L > 0 else t
        rhs = K * running
        if eps > 0:
            ratio = math.inf if rhs == 0 else float(eps) / rhs
            if ratio > worst:
                worst, worst_step = ratio, i
    return StabilityReport(ok=worst <= 1.0, worst_ratio=worst, worst_step=worst_step)


@dataclass(frozen=True)
class DominanceReport:
    ok: bool
    worst_gap: float        # max_y (reference CDF - empirical CDF)
    worst_at: int
    allowance: float
    replications: int


def cdf_dominance(samples, reference_cdf, allowance):
    """One-sided check: empirical CDF of samples >= reference_cdf(y) - allowance
    at every integer y up to the largest sample."""
    samples = np.asarray(samples, dtype=np.int64)
    if not samples.size:
        raise ValueError("Need at least one sample")
    if samples.min() < 0:
        raise ValueError("Counts must be nonnegative, got %d" % samples.min())
    top = int(samples.max())
    empirical = np.cumsum(np.bincount(samples, minlength=top + 1)) / samples.size
    reference = np.array([reference_cdf(y) for y in range(top + 1)])
    gaps = reference - empirical
    worst_at = int(np.argmax(gaps))
    worst = float(gaps[worst_at])
    return DominanceReport(ok=worst <= allowance, worst_gap=worst, worst_at=worst_at,
                           allowance=allowance, replications=int(samples.size))


def nb_dominance_one_step(g, p, x0, h, replications, master_seed=0, allowance=0.02):
    """One coupled SI step: |X~_1| - |X_1| against NB((|X_1| - |x0|) k/(k-2), 1 - e^{-h(k-2)})
    mixed over the observed X_1."""
    if p.kind != "SI":
        raise ValueError("One-step negative binomial dominance holds for SI only")
    if g.k <= 2:
        raise ValueError("Negative binomial dominance needs k > 2, got k=%d" % g.k)
    beta = float(p.beta)
    prob = -math.expm1(-h * (g.k - 2))
    extra = np.empty(replications, dtype=np.int64)
    direct = np.empty(replications, dtype=np.int64)
    base = x0.count
    for rep in range(replications):
        block = RandomBlock(master_seed, rep, 1, g.n_edges, g.n)
        approx, _, _ = coupled_dts_bits(g, beta, 0.0, x0.bits, block, h)
        true, _ = des_span_bits(g, beta, 0.0, x0.bits, block, h)
        direct[rep] = int(approx.sum()) - base
        extra[rep] = int(true.sum()) - int(approx.sum())
    shapes, weights = np.unique(direct, return_counts=True)
    weights = weights / replications
    r_unit = g.k / (g.k - 2)

    def mixture_cdf(y):
        return float(sum(w * nb_cdf(NegBinomial(s * r_unit, prob), y) if s > 0 else w
                         for s, w in zip(shapes.tolist(), weights.tolist())))

    report = cdf_dominance(extra, mixture_cdf, allowance)
    logger.debug("One-step NB dominance: worst gap %.4f at y=%d over %d replications",
                 report.worst_gap, report.worst_at, replications)
    return report
