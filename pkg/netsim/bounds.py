"""Error-bound constants, the negative binomial law and scalar inequality checks."""

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import betainc, gammaln

pmf_tail = 1e-12           # truncation mass left out by NegBinomial.support_limit
max_support = 10 ** 7


@dataclass(frozen=True)
class BoundInputs:
    """n nodes, max degree k, recovery rate mu, horizon T = i*h, step h."""
    n: int
    k: int
    T: float
    h: float
    mu: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive, got %r" % self.T)
        if not self.h > 0:
            raise ValueError("h must be positive, got %r" % self.h)
        if self.mu < 0:
            raise ValueError("mu must be nonnegative, got %r" % self.mu)


@dataclass(frozen=True)
class BoundResult:
    C: float
    K: float
    bound: float
    n: int

    @property
    def vacuous(self):
        # |eps| can never exceed n
        return self.bound > self.n


def _check_step(inp):
    if inp.h > 1:
        raise ValueError("Error bounds are only established for h <= 1, got h=%r" % inp.h)


def si_bound(inp):
    """C = n k^2 e^(k-2), K = (e^(kT) - 1)/k, bound = C K h."""
    _check_step(inp)
    C = inp.n * inp.k ** 2 * math.exp(inp.k - 2)
    K = math.expm1(inp.k * inp.T) / inp.k
    return BoundResult(C, K, C * K * inp.h, inp.n)


def sis_bound(inp):
    """C = n k (k e^(k-2) + mu), K = (e^((k+mu)T) - 1)/(k+mu), bound = C K h."""
    _check_step(inp)
    L = inp.k + inp.mu
    C = inp.n * inp.k * (inp.k * math.exp(inp.k - 2) + inp.mu)
    K = math.expm1(L * inp.T) / L
    return BoundResult(C, K, C * K * inp.h, inp.n)


def process_bound(kind, inp):
    return si_bound(inp) if kind == "SI" else sis_bound(inp)


BOUND_COLUMNS = ["process", "n", "k", "mu", "T", "h", "C", "K", "bound", "vacuous"]


def bound_table(kind, n, k, T, h_values, mu=0.0):
    """One row per h; rows with h > 1 keep their inputs and carry an `error` marker."""
    rows = []
    for h in h_values:
        inp = BoundInputs(n=n, k=k, T=T, h=h, mu=mu)
        try:
            res = process_bound(kind, inp)
        except ValueError:
            rows.append([kind, n, k, mu, T, h, None, None, None, "error"])
            continue
        rows.append([kind, n, k, mu, T, h, res.C, res.K, res.bound,
                     "true" if res.vacuous else "false"])
    return pd.DataFrame(rows, columns=BOUND_COLUMNS)


class NegBinomial:
    """Number of successes before r failures; r may be any positive real.

    pmf(j) = Gamma(j + r) / (j! Gamma(r)) p^j (1 - p)^r, evaluated in log space.
    """

    def __init__(self, r, p):
        if not r > 0:
            raise ValueError("Negative binomial shape r must be positive, got %r" % r)
        if not 0.0 <= p < 1.0:
            raise ValueError("Negative binomial p must be in [0, 1), got %r" % p)
        self.r = float(r)
        self.p = float(p)

    @property
    def mean(self):
        return self.r * self.p / (1.0 - self.p)

    @property
    def variance(self):
        return self.r * self.p / (1.0 - self.p) ** 2

    def logpmf(self, j):
        j = np.asarray(j, dtype=float)
        if self.p == 0.0:
            return np.where(j == 0, 0.0, -np.inf)
        return (gammaln(j + self.r) - gammaln(j + 1) - gammaln(self.r)
                + j * math.log(self.p) + self.r * math.log1p(-self.p))

    def pmf(self, j):
        return np.exp(self.logpmf(j))

    def support_limit(self, tail=pmf_tail):
        """Smallest y with 1 - cdf(y) below tail (adaptive truncation point)."""
        if self.p == 0.0:
            return 0
        y = max(int(self.mean + 10 * math.sqrt(self.variance)) + 10, 16)
        while y < max_support:
            if self.sf(y) < tail:
                return y
            y *= 2
        raise ValueError("Negative binomial r=%g p=%g has too heavy a tail" % (self.r, self.p))

    def cdf(self, y):
        """P(X <= y) = I_{1-p}(r, floor(y) + 1), the regularized incomplete beta;
        scalar in, float out, arrays elementwise."""
        y = np.floor(np.asarray(y, dtype=float))
        if self.p == 0.0:
            out = np.where(y >= 0, 1.0, 0.0)
        else:
            out = np.where(y < 0, 0.0, betainc(self.r, np.maximum(y, 0.0) + 1.0, 1.0 - self.p))
        return float(out) if out.ndim == 0 else out

    def sf(self, y):
        """P(X > y) = I_p(floor(y) + 1, r), accurate deep in the tail."""
        y = np.floor(np.asarray(y, dtype=float))
        if self.p == 0.0:
            out = np.where(y >= 0, 0.0, 1.0)
        else:
            out = np.where(y < 0, 1.0, betainc(np.maximum(y, 0.0) + 1.0, self.r, self.p))
        return float(out) if out.ndim == 0 else out

    def sample(self, rng, size):
        """Gamma(r, p/(1-p))-mixed Poisson draws."""
        lam = rng.gamma(self.r, self.p / (1.0 - self.p), size=size)
        return rng.poisson(lam)

    def __repr__(self):
        return "NegBinomial(r=%g, p=%g)" % (self.r, self.p)


def nb_mean(d):
    if d.p >= 1:
        raise ValueError("Mean is infinite for p >= 1")
    return d.mean


def nb_cdf(d, y):
    return d.cdf(y)


def yule_law(m, k, t):
    """Law of the infected count minus one on the (m, k) tree at time t from
    only the root: NB(m/(k-2), 1 - e^{-(k-2)t})."""
    return NegBinomial(m / (k - 2), -math.expm1(-(k - 2) * t))


def dominating_law(infected, k, t):
    """NB(|x0| k/(k-2), 1 - e^{-(k-2)t}), the stochastic upper bound on new SI infections by t."""
    return NegBinomial(infected * k / (k - 2), -math.expm1(-(k - 2) * t))


def lemma_s2_check(c, h):
    """exp(c h) - 1 <= h c exp(c) for c >= 0, 0 <= h <= 1."""
    if c < 0 or not 0 <= h <= 1:
        raise ValueError("Need c >= 0 and 0 <= h <= 1, got c=%r h=%r" % (c, h))
    return math.expm1(c * h) <= h * c * math.exp(c)


def lemma_s3_check(a, b, t):
    """(b - a) t - (exp(-a t) - exp(-b t)) >= 0 for 0 <= a <= b, any real t."""
    if a < 0 or a > b:
        raise ValueError("Need 0 <= a <= b, got a=%r b=%r" % (a, b))
    diff = math.exp(-a * t) * -math.expm1(-(b - a) * t)
    slack = 1e-12 * max(1.0, abs(diff), abs((b - a) * t))
    return (b - a) * t - diff >= -slack
