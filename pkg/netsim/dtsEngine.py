"""Discrete-time approximation (DTS) of the contact process.

All nodes are updated synchronously once per step of length h against the
start-of-step state: susceptible j is infected with probability
1 - exp(-h beta n(j, x)), an infected node recovers (SIS) with probability
1 - exp(-mu h). Only primary infections happen within a step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from .process import InfectionState, neighbor_counts_bits

logger = logging.getLogger(__name__)

STEP_POLICIES = ("truncate", "partial-final")


@dataclass(frozen=True)
class DtsConfig:
    """Step length h, horizon t_end and how the last partial interval is handled.

    `truncate` takes floor(t_end / h) full steps; `partial-final` appends one
    shorter step to land exactly on t_end.
    """
    h: float
    t_end: float = 1.0
    step_policy: str = "truncate"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("Step length h must be positive, got %r" % self.h)
        if not self.t_end > 0:
            raise ValueError("t_end must be positive, got %r" % self.t_end)
        if self.step_policy not in STEP_POLICIES:
            raise ValueError("Unknown step policy %r (%s)" % (self.step_policy, ", ".join(STEP_POLICIES)))

    @property
    def full_steps(self):
        # relative guard so 0.3/0.1 counts as 3 steps
        return int(math.floor(self.t_end / self.h * (1 + 1e-12)))

    def step_lengths(self):
        lengths = [self.h] * self.full_steps
        if self.step_policy == "partial-final":
            rest = self.t_end - self.full_steps * self.h
            if rest > 1e-12 * self.t_end:
                lengths.append(rest)
        return lengths

    @property
    def end_time(self):
        """Time of the last DTS observation."""
        if self.step_policy == "partial-final":
            return self.t_end
        return min(self.full_steps * self.h, self.t_end)


@dataclass
class DtsTrajectory:
    initial: InfectionState
    final: InfectionState
    h: float
    times: List[float] = field(default_factory=list)
    states: List[InfectionState] = field(default_factory=list)
    events_total: int = 0
    steps: int = 0
    timers_created: int = 0
    prevalence: List[float] = field(default_factory=list)


def step_bits(g, beta, mu, bits, h, rng):
    """One synchronous step on raw bits; returns (new bits, flips, S-I edges).

    One uniform per susceptible node with n(j, x) > 0, then one per infected
    node when mu > 0, so SIS with mu = 0 consumes exactly the SI draws.
    """
    counts = neighbor_counts_bits(g, bits)
    new = bits.copy()
    flips = 0
    at_risk = np.flatnonzero(counts)
    if at_risk.size:
        prob = -np.expm1(-h * beta * counts[at_risk])
        hit = at_risk[rng.random(at_risk.size) < prob]
        new[hit] = True
        flips += hit.size
    if mu > 0:
        infected = np.flatnonzero(bits)
        if infected.size:
            rec = infected[rng.random(infected.size) < -math.expm1(-mu * h)]
            new[rec] = False
            flips += rec.size
    return new, flips, int(counts.sum())


def dts_step(g, p, x, h, rng):
    """One DTS step from x; h = 0 is the identity."""
    if h < 0:
        raise ValueError("Step length must be nonnegative, got %r" % h)
    new, _, _ = step_bits(g, float(p.beta), float(p.recovery_rate), x.bits, h, rng)
    return InfectionState(new)


def run_dts(g, p, x0, cfg, rng, keep_states=True):
    """Iterate dts_step over cfg.step_lengths().

    Counters: events_total is the number of node flips, steps the number of
    steps taken, timers_created the S-I edges present at each step start.
    """
    if x0.n != g.n:
        raise ValueError("State has %d nodes, graph has %d" % (x0.n, g.n))
    beta, mu = float(p.beta), float(p.recovery_rate)
    bits = x0.bits.copy()
    tr = DtsTrajectory(initial=x0, final=x0, h=cfg.h)
    t = 0.0
    tr.times.append(t)
    tr.prevalence.append(x0.prevalence)
    if keep_states:
        tr.states.append(x0)
    for length in cfg.step_lengths():
        bits, flips, si_edges = step_bits(g, beta, mu, bits, length, rng)
        t += length
        tr.events_total += flips
        tr.timers_created += si_edges
        tr.steps += 1
        tr.times.append(t)
        tr.prevalence.append(float(bits.mean()))
        if keep_states:
            tr.states.append(InfectionState(bits))
    tr.final = InfectionState(bits)
    return tr


def prevalence_frame(tr):
    return pd.DataFrame({
        "step": np.arange(len(tr.times)),
        "time": tr.times,
        "prevalence": tr.prevalence,
    }, columns=["step", "time", "prevalence"])


def write_prevalence_csv(tr, path):
    """Per-step prevalence as `step,time,prevalence`."""
    prevalence_frame(tr).to_csv(path, index=False, float_format="%.9g")


def write_states_csv(tr, path):
    """Per-step states as `step,time,state`, each state as InfectionState.to_hex()."""
    if len(tr.states) != len(tr.times):
        raise ValueError("Trajectory was run without keep_states")
    frame = pd.DataFrame({
        "step": np.arange(len(tr.times)),
        "time": tr.times,
        "state": [x.to_hex() for x in tr.states],
    }, columns=["step", "time", "state"])
    frame.to_csv(path, index=False, float_format="%.9g")
