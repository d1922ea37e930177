"""Brute-force reference computations used across the test suite.

Nothing here calls the recursion or the boundary builders; stop decisions
come from ``evaluate`` (one call per stage outcome) or from the formulas
written out below.
"""
import itertools
import math
from fractions import Fraction

import numpy as np

from seqplan.rules import evaluate


def mb_direct(z, t):
    if not 0 < t < 1:
        return -math.inf
    if z == 0:
        return math.log(1 - t)
    if z == 1:
        return math.log(t)
    if not 0 < z < 1:
        return -math.inf
    return z * (math.log(t) - math.log(z)) + (1 - z) * (math.log1p(-t) - math.log1p(-z))


def mp_direct(z, t):
    if t <= 0:
        return -math.inf
    if z == 0:
        return -t
    if z < 0:
        return -math.inf
    return z - t + z * (math.log(t) - math.log(z))


def mfun_direct(z, t):
    if not 0 < t < 1:
        return -math.inf
    return 9 * (z - t) ** 2 / (2 * (z + 2 * t) * (z + 2 * t - 3))


def decision_table(plan):
    """{(stage, k): Decision} for every reachable sum of a binomial/hyper plan."""
    out = {}
    for ell, b in enumerate(plan.boundaries, start=1):
        for k in range(b.size + 1):
            out[ell, k] = evaluate(plan, ell, k)
    return out


def _miss(dcs, theta, tol=1e-12):
    return dcs.lower >= theta - tol or dcs.upper <= theta + tol


def enumerate_binomial(plan, theta):
    """(complement, stop pmf, asn, survival) from all 2**n_s Bernoulli paths."""
    sizes = [b.size for b in plan.boundaries]
    ns = sizes[-1]
    tab = decision_table(plan)
    bits = ((np.arange(2 ** ns)[:, None] >> np.arange(ns)) & 1).astype(np.int64)
    csum = np.cumsum(bits, axis=1)
    tot = csum[:, -1]
    w = np.where(tot == 0, (1 - theta) ** ns, 0.0) if theta in (0.0, 1.0) else None
    if theta == 0.0:
        w = (tot == 0).astype(float)
    elif theta == 1.0:
        w = (tot == ns).astype(float)
    else:
        w = np.exp(tot * math.log(theta) + (ns - tot) * math.log1p(-theta))
    comp = []
    pmf = [[] for _ in sizes]
    used = []
    surv = []
    for i in range(2 ** ns):
        for ell, n in enumerate(sizes, start=1):
            d = tab[ell, int(csum[i, n - 1])]
            if d.stop:
                pmf[ell - 1].append(w[i])
                used.append(w[i] * n)
                if _miss(d, theta):
                    comp.append(w[i])
                break
        else:
            surv.append(w[i])
            used.append(w[i] * sizes[-1])
    return (math.fsum(comp), [math.fsum(p) for p in pmf], math.fsum(used), math.fsum(surv))


def enumerate_hyper(plan, M):
    """Same quantities for an urn of plan.N balls with M marked, by exact
    enumeration of ordered draw sequences (rational weights)."""
    N = plan.N
    sizes = [b.size for b in plan.boundaries]
    ns = sizes[-1]
    theta = M / N
    tab = decision_table(plan)
    comp = Fraction(0)
    pmf = [Fraction(0) for _ in sizes]
    used = Fraction(0)

    def falling(a, r):
        out = 1
        for i in range(r):
            out *= a - i
        return out

    denom = falling(N, ns)
    for seq in itertools.product((0, 1), repeat=ns):
        k = sum(seq)
        num = falling(M, k) * falling(N - M, ns - k)
        if num == 0:
            continue
        w = Fraction(num, denom)
        run = 0
        for ell, n in enumerate(sizes, start=1):
            run = sum(seq[:n])
            d = tab[ell, run]
            if d.stop:
                pmf[ell - 1] += w
                used += w * n
                if _miss(d, theta):
                    comp += w
                break
    return float(comp), [float(p) for p in pmf], float(used)


def exhaustive_width_ok(plan, eps):
    """Every stopping outcome of a bounded-width plan has U - L <= 2 eps."""
    worst = 0.0
    for ell, b in enumerate(plan.boundaries, start=1):
        for k in range(b.size + 1):
            d = evaluate(plan, ell, k)
            if d.stop:
                worst = max(worst, d.upper - d.lower)
    return worst <= 2 * eps + 1e-12, worst


def random_binomial_plan(rng, smax=3, nmax=12, random_sets=False):
    """Small binomial plan with random sizes; optionally random continue sets."""
    from dataclasses import replace
    from seqplan.rules import ErrorSpec, StageBoundary, build_plan

    s = int(rng.integers(1, smax + 1))
    sizes = np.sort(rng.choice(np.arange(1, nmax + 1), size=s, replace=False))
    kind = rng.choice(["abs", "mix", "cdf"])
    zeta = float(rng.uniform(0.05, 1.0))
    if kind == "mix":
        spec = ErrorSpec("mixed", 0.05, eps_a=0.05, eps_r=float(rng.uniform(0.2, 0.6)))
        plan = build_plan("binomial-mix", spec, zeta, sizes=sizes)
    else:
        spec = ErrorSpec("absolute", float(rng.uniform(0.02, 0.2)), eps=float(rng.uniform(0.05, 0.3)))
        plan = build_plan("binomial-abs", spec, zeta, rule="chernoff" if kind == "abs" else "cdf",
                          sizes=sizes)
    if not random_sets:
        return plan
    bnds = []
    for ell, b in enumerate(plan.boundaries, start=1):
        if ell == s:
            bnds.append(StageBoundary(ell, b.size, ()))
            continue
        keep = rng.random(b.size + 1) < 0.6
        cont = tuple((k, k) for k in range(b.size + 1) if keep[k])
        bnds.append(StageBoundary(ell, b.size, cont))
    return replace(plan, boundaries=tuple(bnds))


def random_designed_plan(rng):
    """Binomial absolute-error plan from the schedule, at a random zeta."""
    from seqplan.rules import ErrorSpec, build_plan

    eps = float(rng.uniform(0.15, 0.3))
    delta = float(rng.uniform(0.05, 0.2))
    zeta = float(rng.uniform(0.1, 2.0))
    return build_plan("binomial-abs", ErrorSpec("absolute", delta, eps=eps), zeta)
