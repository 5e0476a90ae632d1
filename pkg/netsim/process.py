"""Infection states and SI/SIS parameters.

The neighbour-count kernel n(j, x) lives here and is shared by both engines:
the count of infected neighbours of j when j is susceptible, 0 when j is infected.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]


class InfectionState:
    """Binary infection vector x of length n (True = infected).

    Values are immutable; engines work on their own copies of `bits`.
    """

    __slots__ = ("bits",)

    def __init__(self, bits):
        bits = np.array(bits, dtype=bool).ravel()
        bits.setflags(write=False)
        self.bits = bits

    @classmethod
    def susceptible(cls, n):
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def infected(cls, n):
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def from_nodes(cls, n, nodes):
        bits = np.zeros(n, dtype=bool)
        bits[list(nodes)] = True
        return cls(bits)

    @property
    def n(self):
        return len(self.bits)

    @property
    def count(self):
        """|x|, the number of infected nodes."""
        return int(self.bits.sum())

    @property
    def prevalence(self):
        return self.count / self.n

    def infected_nodes(self):
        """I(x) as a sorted id array."""
        return np.flatnonzero(self.bits)

    def susceptible_nodes(self):
        """S(x) as a sorted id array."""
        return np.flatnonzero(~self.bits)

    def __getitem__(self, j):
        return bool(self.bits[j])

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        return isinstance(other, InfectionState) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        return "InfectionState(n=%d, infected=%d)" % (self.n, self.count)

    def to_hex(self):
        """Hex bitstring; node 0 is the most significant bit of the first byte,
        the last byte is zero-padded on the right."""
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text, n):
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        if len(raw) * 8 < n:
            raise ValueError("Hex state too short for n=%d" % n)
        return cls(np.unpackbits(raw)[:n].astype(bool))


@dataclass(frozen=True)
class ProcessParams:
    """SI or SIS contact process on a graph.

    beta is the per-edge infection rate (1 reproduces the unit-rate process),
    mu the per-node recovery rate, ignored for SI.
    """
    kind: str = "SI"
    beta: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if self.kind not in ("SI", "SIS"):
            raise ValueError("Process kind must be SI or SIS, got %r" % self.kind)
        if not self.beta > 0:
            raise ValueError("beta must be positive, got %r" % self.beta)
        if self.mu < 0:
            raise ValueError("mu must be nonnegative, got %r" % self.mu)

    @property
    def recovery_rate(self):
        return self.mu if self.kind == "SIS" else 0.0


@dataclass(frozen=True)
class InitSpec:
    prevalence: float = 0.1
    seed: Seed = 0

    def __post_init__(self):
        if not 0.0 <= self.prevalence <= 1.0:
            raise ValueError("prevalence must be in [0, 1], got %r" % self.prevalence)

    def initial_count(self, n):
        # half-up rounding
        return int(math.floor(self.prevalence * n + 0.5))


def neighbor_counts_bits(g, bits):
    """n(j, x) for every j at once, from a raw boolean vector."""
    counts = g.matrix.dot(bits.astype(np.int64))
    counts[bits] = 0
    return counts


def neighbor_counts(g, x):
    return neighbor_counts_bits(g, x.bits)


def infected_neighbor_count(g, x, j):
    """n(j, x): infected neighbours of susceptible j, 0 when j is infected."""
    if x.bits[j]:
        return 0
    return int(x.bits[list(g.adjacency[j])].sum()) if g.adjacency[j] else 0


def si_edge_count(g, x):
    """Number of susceptible-infected edges, the sum of n(j, x) over j."""
    return int(neighbor_counts(g, x).sum())


def neighbor_count_l1_diff(g, x, z):
    """sum_j |n(j, x) - n(j, z)|."""
    return int(np.abs(neighbor_counts(g, x) - neighbor_counts(g, z)).sum())


def dominates(x, z):
    """True iff every node infected in z is infected in x (x >= z componentwise)."""
    if x.n != z.n:
        raise ValueError("States have different lengths (%d vs %d)" % (x.n, z.n))
    return not bool(np.any(z.bits & ~x.bits))


def l1_distance(x, z):
    if x.n != z.n:
        raise ValueError("States have different lengths (%d vs %d)" % (x.n, z.n))
    return int(np.count_nonzero(x.bits != z.bits))


def random_initial_state(g, init):
    """Infect round(prevalence * n) distinct nodes chosen uniformly from init.seed."""
    count = init.initial_count(g.n)
    rng = np.random.default_rng(init.seed)
    bits = np.zeros(g.n, dtype=bool)
    bits[rng.choice(g.n, size=count, replace=False)] = True
    return InfectionState(bits)
