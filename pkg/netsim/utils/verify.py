r"""Numerical checks of the error theory: scalar lemmas, coupling properties
and distributional oracles.

Example usage:
python -m netsim.utils.verify --suite lemmas
python -m netsim.utils.verify --suite all --scale 50 -v

Each check prints one PASS/FAIL line with its measured statistic; the exit
status is 0 iff every check passed.
"""

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln

from ..bounds import BoundInputs, NegBinomial, lemma_s2_check, lemma_s3_check, process_bound
from ..coupling import (aggregate_errors, lipschitz_constant, lipschitz_estimate,
                        nb_dominance_one_step, run_coupled, zero_stability_check)
from ..desEngine import ctmc_transient, run_des
from ..dtsEngine import DtsConfig
from ..experiments import dominance_oracle_test, fit_loglog, yule_oracle_test
from ..graph import Graph, make_small_world, make_torus
from ..process import (InfectionState, ProcessParams, InitSpec, neighbor_count_l1_diff,
                       random_initial_state)

logger = logging.getLogger(__name__)

SUITES = ("lemmas", "coupling", "oracles")

# log Gamma at selected points: closed forms up to 11, Stirling series with
# terms through x^-13 from 100 on, both evaluated in extended precision
LOG_GAMMA_REFERENCE = {
    0.5: 0.5723649429247001,
    1.0: 0.0,
    1.5: -0.12078223763524522,
    2.0: 0.0,
    2.5: 0.2846828704729192,
    3.0: 0.6931471805599453,
    3.5: 1.2009736023470743,
    4.5: 2.4537365708424423,
    5.0: 3.1780538303479458,
    6.0: 4.787491742782046,
    7.0: 6.579251212010101,
    8.0: 8.525161361065415,
    9.0: 10.604602902745251,
    10.0: 12.801827480081469,
    11.0: 15.104412573075516,
    100.0: 359.1342053695754,
    180.5: 755.6509402123779,
    1000.0: 5905.220423209181,
    1e5: 1051287.708973657,
    1e7: 151180949.36947393,
}


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    passed: bool
    measured: str
    samples: int = 0

    def line(self):
        return "%s %-32s %s" % ("PASS" if self.passed else "FAIL", self.suite + "/" + self.name, self.measured)


def lemma_checks(scale=1, seed=0):
    rng = np.random.default_rng([seed, 101])
    checks = []

    grid = [(c, h) for c in np.linspace(0, 20, 100) for h in np.linspace(0, 1, 100)]
    ok = sum(lemma_s2_check(c, h) for c, h in grid)
    checks.append(Check("lemmas", "s2-grid", ok == len(grid), "%d/%d points" % (ok, len(grid))))

    ab = np.sort(rng.uniform(0, 10, size=(10 ** 4, 2)), axis=1)
    ts = rng.uniform(-10, 10, size=10 ** 4)
    ok = sum(lemma_s3_check(a, b, t) for (a, b), t in zip(ab.tolist(), ts.tolist()))
    checks.append(Check("lemmas", "s3-samples", ok == len(ts), "%d/%d samples" % (ok, len(ts))))

    graphs = [make_torus(10, 10), make_small_world(10, 10, 5, seed), make_small_world(10, 10, 6, seed + 1)]
    pairs, ok = 10 ** 4, 0
    for trial in range(pairs):
        g = graphs[trial % len(graphs)]
        z = rng.random(g.n) < rng.uniform(0, 0.5)
        x = z | (rng.random(g.n) < rng.uniform(0, 0.2))
        zs, xs = InfectionState(z), InfectionState(x)
        ok += neighbor_count_l1_diff(g, xs, zs) <= g.k * int(np.count_nonzero(x != z))
    checks.append(Check("lemmas", "s8-pairs", ok == pairs, "%d/%d pairs" % (ok, pairs)))

    size = 10 ** 5
    a, b, both = NegBinomial(0.7, 0.4), NegBinomial(1.8, 0.4), NegBinomial(2.5, 0.4)
    summed = a.sample(rng, size) + b.sample(rng, size)
    ks = stats.ks_2samp(summed, both.sample(rng, size)).statistic
    checks.append(Check("lemmas", "nb-divisibility", ks < 0.01, "KS=%.4f (< 0.01)" % ks))

    worst = max(abs(float(gammaln(x)) - ref) / max(1.0, abs(ref)) for x, ref in LOG_GAMMA_REFERENCE.items())
    checks.append(Check("lemmas", "log-gamma", worst <= 1e-12, "max rel err %.2e" % worst))
    return checks


def _coupled_paths(g, p, h, t_end, reps, seed):
    cfg = DtsConfig(h, t_end)
    paths = []
    for rep in range(reps):
        x0 = random_initial_state(g, InitSpec(0.1, seed=[seed, rep, 0]))
        paths.append(run_coupled(g, p, x0, cfg, (seed, int(round(h * 1e6))), rep=rep, keep_states=False))
    return paths


def _dominated_pair(g, rng, max_diff=5):
    z = rng.random(g.n) < 0.1
    susceptible = np.flatnonzero(~z)
    extra = rng.choice(susceptible, size=int(rng.integers(1, max_diff + 1)), replace=False)
    x = z.copy()
    x[extra] = True
    return InfectionState(x), InfectionState(z)


def coupling_checks(scale=1, seed=0):
    checks = []
    torus = make_torus(20, 20)
    small_world = make_small_world(20, 20, 5, seed)
    si = ProcessParams("SI", 1.0)
    sis = ProcessParams("SIS", 1.0, 0.2)

    checks.append(si_dominance_check(scale, seed, graphs=(torus, small_world)))

    for p in (si, sis):
        tag = p.kind.lower()
        L = lipschitz_constant(torus, p)
        for h in (0.01, 0.05, 0.2):
            report = aggregate_errors(_coupled_paths(torus, p, h, 1.0, 20 * scale, seed))
            inp = BoundInputs(n=torus.n, k=torus.k, T=float(report.times[-1]), h=h, mu=p.recovery_rate)
            bound = process_bound(p.kind, inp)
            mean_d = float(report.mean_d.mean())
            checks.append(Check("coupling", "local-error-%s h=%g" % (tag, h), mean_d <= bound.C * h,
                                "mean|d|=%.3f <= C*h=%.1f" % (mean_d, bound.C * h)))
            checks.append(Check("coupling", "global-error-%s h=%g" % (tag, h),
                                report.final_mean_eps <= bound.bound,
                                "mean|eps_M|=%.3f <= CKh=%.1f" % (report.final_mean_eps, bound.bound)))
            stability = zero_stability_check(report, L)
            checks.append(Check("coupling", "zero-stability-%s h=%g" % (tag, h), stability.ok,
                                "worst ratio %.3f at step %d" % (stability.worst_ratio, stability.worst_step)))

        hs = (0.01, 0.02, 0.05, 0.1)
        first = []
        for h in hs:
            report = aggregate_errors(_coupled_paths(torus, p, h, h, 2000 * scale, seed))
            first.append(float(report.mean_d[0]))
        fit = fit_loglog(hs, first)
        slope = float("nan") if fit is None else fit.slope
        checks.append(Check("coupling", "local-error-slope-%s" % tag, 0.7 <= slope <= 1.3,
                            "slope=%.3f in [0.7, 1.3]" % slope))

        rng = np.random.default_rng([seed, 202])
        worst, ok = -math.inf, True
        for pair in range(20):
            x, z = _dominated_pair(torus, rng)
            rep = lipschitz_estimate(torus, p, x, z, 0.1, 200 * scale, master_seed=(seed, pair))
            ok &= rep.ok
            worst = max(worst, (rep.mean - rep.bound) / max(rep.stderr, 1e-12))
        checks.append(Check("coupling", "lipschitz-%s" % tag, ok,
                            "20 pairs, worst (mean-L|x-z|)/se=%.2f" % worst))

    checks.append(nb_one_step_check(500 * scale, seed))
    return checks


def si_dominance_check(scale=1, seed=0, graphs=None):
    """X~_i >= X_i at every coupled SI step; 2240 * scale steps over the
    torus and a small world at h = 0.01, 0.1 and 0.5."""
    if graphs is None:
        graphs = (make_torus(20, 20), make_small_world(20, 20, 5, seed))
    si = ProcessParams("SI", 1.0)
    steps = violations = 0
    for g in graphs:
        for h in (0.01, 0.1, 0.5):
            report = aggregate_errors(_coupled_paths(g, si, h, 1.0, 10 * scale, seed))
            steps += report.steps_checked
            violations += report.dominance_violations
    return Check("coupling", "dominance-si", violations == 0,
                 "%d violations in %d steps" % (violations, steps), steps)


def nb_one_step_check(replications, seed=0):
    big = make_torus(30, 30)
    x0 = random_initial_state(big, InitSpec(0.1, seed=[seed, 303]))
    report = nb_dominance_one_step(big, ProcessParams("SI", 1.0), x0, 0.1, replications, master_seed=seed)
    return Check("coupling", "nb-one-step", report.ok,
                 "worst gap %.4f at y=%d (allowance %.2f)" % (report.worst_gap, report.worst_at,
                                                            report.allowance), replications)


def oracle_checks(scale=1, seed=0):
    checks = []
    reps = 2000 * scale
    for m, k, t in ((2, 4, 0.3), (3, 3, 0.5), (4, 4, 0.2)):
        rep = yule_oracle_test(m, k, t, reps, seed=seed)
        checks.append(Check("oracles", "yule m=%d k=%d t=%g" % (m, k, t), rep.passed,
                            "KS=%.4f < %.4f, mean %.3f vs %.3f" % (rep.statistic, rep.threshold,
                                                                rep.mean, rep.expected_mean)))

    checks.extend(dominance_oracle_checks(reps, seed))

    path = _path_graph(3)
    p = ProcessParams("SI", 1.0)
    start = InfectionState.from_nodes(3, [0])
    law = ctmc_transient(path, p, start, 0.5)
    exact = np.zeros(4)
    for s, prob in enumerate(law):
        exact[bin(s).count("1")] += prob
    R = 5000 * scale
    counts = np.zeros(4)
    for r in range(R):
        counts[run_des(path, p, start, 0.5, np.random.default_rng([seed, 505, r]), keep_events=False).final.count] += 1
    freq = counts / R
    sigma = np.sqrt(exact * (1 - exact) / R)
    z = np.abs(freq - exact) / np.maximum(sigma, 1e-12)
    ok = bool(np.all(np.abs(freq - exact) <= 3 * sigma + 1e-12))
    checks.append(Check("oracles", "des-exact path3 t=0.5", ok, "max |z|=%.2f over %d runs" % (z.max(), R)))
    return checks


def dominance_oracle_checks(replications, seed=0):
    torus = make_torus(30, 30)
    x0 = random_initial_state(torus, InitSpec(0.1, seed=[seed, 404]))
    checks = []
    for x, t in ((x0, 0.1), (InfectionState.from_nodes(torus.n, [0]), 0.05)):
        rep = dominance_oracle_test(torus, x, t, replications, seed=seed)
        checks.append(Check("oracles", "dominance |x0|=%d t=%g" % (x.count, t), rep.passed,
                            "worst gap %.4f (allowance %.2f)" % (rep.statistic, rep.threshold), replications))
    return checks


def _path_graph(n):
    return Graph(n, [(i, i + 1) for i in range(n - 1)])


SUITE_RUNNERS = {"lemmas": lemma_checks, "coupling": coupling_checks, "oracles": oracle_checks}


def run_verification(suite="all", scale=1, seed=0, out=None):
    """Run one suite (or all), print a line per check and return the checks."""
    out = out or sys.stdout
    names = SUITES if suite == "all" else (suite,)
    checks = []
    for name in names:
        start = time.time()
        for check in SUITE_RUNNERS[name](scale=scale, seed=seed):
            print(check.line(), file=out)
            checks.append(check)
        logger.info("Suite %s done in %.3f seconds", name, time.time() - start)
    return checks


def parse_arguments(argv=None):
    parser = argparse.ArgumentParser(description="Verification suite")
    parser.add_argument("--suite", choices=SUITES + ("all",), default="all", help="Suite to run")
    parser.add_argument("--scale", type=int, default=1, help="Multiplier on replication counts")
    parser.add_argument("--seed", type=int, default=0, help="Master seed")
    parser.add_argument("-v", "--verbose", help="Increase output verbosity.", action="store_true")
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_arguments(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    checks = run_verification(args.suite, args.scale, args.seed)
    return 0 if all(c.passed for c in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
