"""Exact continuous-time simulation (DES) of the SI/SIS contact process.

Gillespie direct method. The engine keeps n(j, x) for every susceptible node
with at least one infected neighbour in a weighted set sampled by rejection
(weights are bounded by the max degree k), and the infected nodes in an
indexed set, so each event costs O(k).
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List

import numpy as np
import pandas as pd
from scipy import linalg

from .process import InfectionState, neighbor_counts_bits

logger = logging.getLogger(__name__)

INFECTION = "infection"
RECOVERY = "recovery"
max_oracle_nodes = 10


@dataclass(frozen=True)
class Event:
    time: float
    node: int
    kind: str


@dataclass
class Trajectory:
    initial: InfectionState
    final: InfectionState
    t_end: float
    events: List[Event] = field(default_factory=list)
    events_total: int = 0
    timers_created: int = 0
    keep_events: bool = True
    checkpoints: Dict[float, InfectionState] = field(default_factory=dict)

    @property
    def steps(self):
        # one DES step per event
        return self.events_total

    @cached_property
    def event_times(self):
        return np.array([ev.time for ev in self.events], dtype=float)


class _ListDict:
    """Set of node ids with O(1) add/remove and uniform or weighted choice.

    Weighted choice uses rejection against a fixed weight bound, the same
    trick as the weighted list-dict of EoN's Gillespie code.
    """

    def __init__(self, n):
        self.items = []
        self.position = [-1] * n

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return self.position[item] >= 0

    def add(self, item):
        if self.position[item] < 0:
            self.position[item] = len(self.items)
            self.items.append(item)

    def remove(self, item):
        pos = self.position[item]
        if pos < 0:
            return
        last = self.items.pop()
        if last != item:
            self.items[pos] = last
            self.position[last] = pos
        self.position[item] = -1

    def choose(self, rng):
        return self.items[int(rng.random() * len(self.items))]

    def choose_weighted(self, rng, weight, bound):
        items = self.items
        size = len(items)
        while True:
            u = rng.random() * size
            item = items[int(u)]
            if rng.random() * bound < weight[item]:
                return item


def run_des(g, p, x0, t_end, rng, keep_events=True, checkpoints=()):
    """Sample one CTMC path of the contact process on [0, t_end].

    From state x the holding time is Exp(R) with
    R = beta * sum_j n(j, x) + mu * |x|; the next event infects susceptible j
    with probability beta n(j, x) / R or recovers an infected node with
    probability mu / R. Stops early in absorbing states (R = 0).

    Args:
        g: Graph
        p: ProcessParams
        x0: initial InfectionState
        t_end: horizon, > 0
        rng: numpy Generator
        keep_events: keep the event log (counters and final state are always kept)
        checkpoints: times in [0, t_end] at which to record the state; they
            consume no randomness, so the path does not depend on them

    Returns:
        Trajectory
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive, got %r" % t_end)
    if x0.n != g.n:
        raise ValueError("State has %d nodes, graph has %d" % (x0.n, g.n))
    marks = sorted(set(float(c) for c in checkpoints))
    if marks and (marks[0] < 0 or marks[-1] > t_end):
        raise ValueError("Checkpoints must lie in [0, %r], got %r..%r" % (t_end, marks[0], marks[-1]))
    snapshots = {}
    beta, mu = float(p.beta), float(p.recovery_rate)
    adjacency = g.adjacency
    bound = max(g.k, 1)

    state = x0.bits.tolist()
    count = neighbor_counts_bits(g, x0.bits).tolist()
    at_risk = _ListDict(g.n)
    for j in np.flatnonzero(np.asarray(count)).tolist():
        at_risk.add(j)
    infected = _ListDict(g.n)
    for i in np.flatnonzero(x0.bits).tolist():
        infected.add(i)
    si_edges = sum(count)
    timers = si_edges
    events = []
    n_events = 0
    t = 0.0

    while True:
        rate = beta * si_edges + mu * len(infected)
        if rate <= 0.0:
            break
        t += rng.standard_exponential() / rate
        while len(snapshots) < len(marks) and marks[len(snapshots)] < t:
            snapshots[marks[len(snapshots)]] = InfectionState(state)
        if t > t_end:
            break
        n_events += 1
        if rng.random() * rate < beta * si_edges:
            j = at_risk.choose_weighted(rng, count, bound)
            state[j] = True
            si_edges -= count[j]
            count[j] = 0
            at_risk.remove(j)
            infected.add(j)
            for v in adjacency[j]:
                if not state[v]:
                    count[v] += 1
                    si_edges += 1
                    timers += 1
                    at_risk.add(v)
            if keep_events:
                events.append(Event(t, j, INFECTION))
        else:
            i = infected.choose(rng)
            state[i] = False
            infected.remove(i)
            c = 0
            for v in adjacency[i]:
                if state[v]:
                    c += 1
                else:
                    count[v] -= 1
                    si_edges -= 1
                    if count[v] == 0:
                        at_risk.remove(v)
            count[i] = c
            si_edges += c
            timers += c
            if c:
                at_risk.add(i)
            if keep_events:
                events.append(Event(t, i, RECOVERY))

    final = InfectionState(state)
    for c in marks[len(snapshots):]:
        snapshots[c] = final
    return Trajectory(initial=x0, final=final, t_end=float(t_end),
                      events=events, events_total=n_events, timers_created=timers,
                      keep_events=keep_events, checkpoints=snapshots)


def replay(tr):
    """Yield (event, state bits) after each event; raises ValueError on an
    impossible event (double infection or recovery of a susceptible node)."""
    if not tr.keep_events:
        raise ValueError("Trajectory was run without an event log")
    bits = tr.initial.bits.copy()
    last = 0.0
    for ev in tr.events:
        if ev.time < last:
            raise ValueError("Event times decrease at t=%r" % ev.time)
        if ev.kind == INFECTION:
            if bits[ev.node]:
                raise ValueError("Node %d infected twice at t=%r" % (ev.node, ev.time))
            bits[ev.node] = True
        else:
            if not bits[ev.node]:
                raise ValueError("Susceptible node %d recovered at t=%r" % (ev.node, ev.time))
            bits[ev.node] = False
        last = ev.time
        yield ev, bits


def state_at(tr, t):
    """State after every event with time <= t (cadlag convention)."""
    if t < 0 or t > tr.t_end:
        raise ValueError("t=%r outside [0, %r]" % (t, tr.t_end))
    if t == tr.t_end:
        return tr.final
    if not tr.keep_events:
        raise ValueError("Trajectory was run without an event log")
    stop = int(np.searchsorted(tr.event_times, t, side="right"))
    bits = tr.initial.bits.copy()
    for ev in tr.events[:stop]:
        bits[ev.node] = ev.kind == INFECTION
    return InfectionState(bits)


def trajectory_frame(tr):
    return pd.DataFrame({
        "time": [ev.time for ev in tr.events],
        "node": [ev.node for ev in tr.events],
        "kind": [ev.kind for ev in tr.events],
    }, columns=["time", "node", "kind"])


def write_trajectory_csv(tr, path):
    """Event log as `time,node,kind`, times with 9 significant digits."""
    trajectory_frame(tr).to_csv(path, index=False, float_format="%.9g")


def state_index(bits):
    """Integer code of a state for the brute-force oracle, bit j = node j."""
    return int(sum(1 << j for j, b in enumerate(bits) if b))


def ctmc_generator(g, p):
    """Dense 2^n x 2^n rate matrix of the contact process on a tiny graph."""
    if g.n > max_oracle_nodes:
        raise ValueError("Brute-force CTMC limited to %d nodes, got %d" % (max_oracle_nodes, g.n))
    size = 1 << g.n
    Q = np.zeros((size, size))
    mu = p.recovery_rate
    for s in range(size):
        for j in range(g.n):
            if s >> j & 1:
                if mu > 0:
                    Q[s, s & ~(1 << j)] += mu
            else:
                nj = sum(s >> v & 1 for v in g.adjacency[j])
                if nj:
                    Q[s, s | (1 << j)] += p.beta * nj
        Q[s, s] = -Q[s].sum()
    return Q


def ctmc_transient(g, p, x0, t):
    """Exact law of X(t) from x0, indexed by state_index, via expm(Q t)."""
    Q = ctmc_generator(g, p)
    row = linalg.expm(Q * t)[state_index(x0.bits)]
    return np.clip(row, 0.0, 1.0)
