"""Exact and bounded coverage, stopping-stage distribution and ASN.

The forward recursion carries the probability mass of surviving sample-sum
(or sample-count) trajectories stage by stage.  With truncation budget eta
every stage variable is restricted to a window certified by Chernoff-type
tail bounds; all reported probabilities are then lower bounds that are off
by at most the reported slack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from . import distributions as dist
from .distributions import mb, mi, mp
from .numerics import BoundPair, bisect_monotone, rect_prob_decompose
from .rules import get_design, law_of, stage_intervals

__all__ = [
    "StageMass", "PathDistribution", "CoverageReport", "TooWide",
    "truncate_windows", "path_recursion", "path_counts", "exact_complement",
    "event_probability", "asn", "cdv_bounds", "complement_bounds_on_interval",
    "lattice_points", "parameter_range",
]

MISS_TOL = 1e-12      # L >= theta - tol counts as a miss (conservative)
DEFAULT_ETA = 1e-10
_FFT_MIN = 200_000    # len(a) * len(b) above which convolution goes through FFT


class TooWide(ValueError):
    """The parameter interval is too wide for the monotone bounding argument."""


@dataclass
class StageMass:
    stage: int
    size: int
    lo: int
    mass: np.ndarray      # P{reach stage, X = x} for x = lo, lo+1, ...
    cont: np.ndarray      # continue mask over the same window

    @property
    def xs(self):
        return np.arange(self.lo, self.lo + len(self.mass))

    @property
    def stop(self):
        return np.where(self.cont, 0.0, self.mass)

    @property
    def survive(self):
        return np.where(self.cont, self.mass, 0.0)


@dataclass
class PathDistribution:
    theta: float
    stages: list
    windows: list
    window_slack: float
    dropped: float        # surviving mass abandoned before the last stage
    survival: float       # mass still continuing after the last materialized stage
    law: str

    @property
    def slack(self):
        return self.window_slack + self.dropped + self.survival

    def log_nu(self, stage):
        """ln of the path-count coefficients nu(k, stage) (binomial law)."""
        if self.law != "binomial":
            raise ValueError("path-count coefficients are defined for the binomial law")
        sm = self.stages[stage - 1]
        k = sm.xs
        th = self.theta
        with np.errstate(divide="ignore"):
            return np.log(sm.mass) - k * math.log(th) - (sm.size - k) * math.log1p(-th)


@dataclass(frozen=True)
class CoverageReport:
    theta: float
    complement: float         # lower end (value computed within windows)
    upper: float              # complement + slack
    asn: BoundPair
    stop_pmf: tuple
    survival: float
    bound_kind: str           # exact | truncated
    eta: float

    @property
    def bounds(self):
        return BoundPair(self.complement, self.upper)


# ---------------------------------------------------------------------------
# marginal laws and certified windows

def _population(plan, theta):
    return dist.population_count(theta, plan.N)


def _support(plan, law, n, theta):
    if law == "binomial":
        return 0, n
    if law == "hyper":
        M = _population(plan, theta)
        return max(0, n - (plan.N - M)), min(n, M)
    if law == "poisson":
        return 0, None
    return n, None            # inverse: count m >= gamma


def _marginal(plan, law, n, theta, xs):
    if law == "binomial":
        lp = dist.binom_logpmf(xs, n, theta)
    elif law == "poisson":
        lp = dist.poisson_logpmf(xs, n * theta)
    elif law == "hyper":
        lp = dist.hyper_logpmf(xs, n, _population(plan, theta), plan.N)
    else:
        lp = dist.invbinom_logpmf(xs, n, theta)
    return np.exp(np.asarray(lp, dtype=float))


def _walk_lo(lo, ok):
    # largest lo such that the bound at lo - 1 is certified
    while lo > 0 and not ok(lo - 1):
        lo -= 1
    return lo


def _window(plan, law, n, theta, budget):
    """Window [lo, hi] of the stage variable with each excluded tail <= budget."""
    slo, shi = _support(plan, law, n, theta)
    if budget <= 0:
        if shi is None:
            raise ValueError("eta must be positive for unbounded supports")
        return slo, shi, False
    lb = math.log(budget)
    if law in ("binomial", "hyper"):
        p = theta
        if p <= 0:
            return 0, 0, False
        if p >= 1:
            return n, n, False
        f = lambda z: n * mb(z, p)
        if f(0.0) > lb:
            lo = slo
        else:
            z = bisect_monotone(f, 0.0, p, lb, 1e-13)
            lo = math.floor(n * z) + 1
            while lo - 1 >= 0 and f((lo - 1) / n) > lb:
                lo -= 1
        if f(1.0) > lb:
            hi = shi
        else:
            z = bisect_monotone(f, p, 1.0, lb, 1e-13)
            hi = math.ceil(n * z) - 1
            while hi + 1 <= n and f((hi + 1) / n) > lb:
                hi += 1
        lo, hi = max(lo, slo), min(hi, shi)
    elif law == "poisson":
        mu = n * theta
        if mu <= 0:
            return 0, 0, False
        g = lambda x: mp(x, mu)
        if -mu > lb:
            lo = 0
        else:
            x = bisect_monotone(g, 0.0, mu, lb, 1e-9 * max(1.0, mu))
            lo = math.floor(x) + 1
            while lo - 1 >= 0 and g(lo - 1) > lb:
                lo -= 1
        top = 2 * mu + 10
        while g(top) > lb:
            top *= 2
        x = bisect_monotone(g, mu, top, lb, 1e-9 * max(1.0, mu))
        hi = math.ceil(x) - 1
        while g(hi + 1) > lb:
            hi += 1
    else:
        gamma, p = n, theta
        if p >= 1:
            return gamma, gamma, False
        h = lambda z: gamma * mi(z, p)
        if h(1.0) > lb:
            lo = gamma
        else:
            z = bisect_monotone(h, p, 1.0, lb, 1e-13)
            lo = math.floor(gamma / z) + 1
            while lo - 1 >= gamma and h(gamma / (lo - 1)) > lb:
                lo -= 1
        z = bisect_monotone(h, 1e-300, p, lb, 1e-15 * p)
        hi = math.ceil(gamma / z) - 1
        while h(gamma / (hi + 1)) > lb:
            hi += 1
        lo = max(lo, gamma)
    clipped = (lo > slo) or (shi is None) or (hi < shi)
    if lo > hi:
        # budget so large that nothing survives: keep the modal point
        if law == "poisson":
            mode = math.floor(n * theta)
        elif law == "inverse":
            mode = max(n, round(n / theta))
        else:
            mode = math.floor((n + 1) * theta)
        mode = max(mode, slo)
        if shi is not None:
            mode = min(mode, shi)
        lo = hi = mode
    return int(lo), int(hi), clipped


def _stage_sizes(plan):
    return [b.size for b in plan.boundaries]


def truncate_windows(plan, theta, eta):
    """Per-stage windows with stage tail mass <= eta / (2 s) (half of eta
    is kept for abandoning negligible surviving mass)."""
    law = law_of(plan)
    sizes = _stage_sizes(plan)
    budget = eta / (4 * len(sizes)) if eta > 0 else 0.0
    return [_window(plan, law, n, theta, budget)[:2] for n in sizes]


# ---------------------------------------------------------------------------
# recursion

def _conv(a, b):
    if len(a) * len(b) > _FFT_MIN:
        out = fftconvolve(a, b)
        np.maximum(out, 0.0, out=out)
        return out
    return np.convolve(a, b)


def _increment(plan, law, dn, theta, jlo, jhi):
    js = np.arange(jlo, jhi + 1)
    if law == "binomial":
        lp = dist.binom_logpmf(js, dn, theta)
    elif law == "poisson":
        lp = dist.poisson_logpmf(js, dn * theta)
    else:
        lp = dist.invbinom_logpmf(js, dn, theta)
    return np.exp(np.asarray(lp, dtype=float))


def _step(plan, law, theta, surv, a, n_from, n_to, lo2, hi2):
    """Mass of X at the next stage on [lo2, hi2] given surviving mass
    ``surv`` on [a, a + len - 1] at the current one."""
    out = np.zeros(hi2 - lo2 + 1)
    nz = np.nonzero(surv > 0)[0]
    if nz.size == 0:
        return out
    surv = surv[nz[0]:nz[-1] + 1]
    a = a + int(nz[0])
    b = a + len(surv) - 1
    dn = n_to - n_from
    if law == "hyper":
        N = plan.N
        M = _population(plan, theta)
        rest = N - n_from
        for i, w in enumerate(surv):
            if w <= 0:
                continue
            x = a + i
            good = M - x
            j0 = max(0, dn - (rest - good), lo2 - x)
            j1 = min(dn, good, hi2 - x)
            if j0 > j1:
                continue
            js = np.arange(j0, j1 + 1)
            out[x + j0 - lo2:x + j1 - lo2 + 1] += w * np.exp(dist.hyper_logpmf(js, dn, good, rest))
        return out
    jmin = dn if law == "inverse" else 0
    jmax = dn if law == "binomial" else None
    jlo = max(jmin, lo2 - b)
    jhi = hi2 - a
    if jmax is not None:
        jhi = min(jhi, jmax)
    if jlo > jhi:
        return out
    inc = _increment(plan, law, dn, theta, jlo, jhi)
    full = _conv(surv, inc)
    start = a + jlo          # value of X for full[0]
    s0 = max(lo2, start)
    s1 = min(hi2, start + len(full) - 1)
    if s0 <= s1:
        out[s0 - lo2:s1 - lo2 + 1] = full[s0 - start:s1 - start + 1]
    return out


def _check_theta(plan, theta):
    law = law_of(plan)
    if not math.isfinite(theta) or theta < 0:
        raise ValueError(f"parameter {theta!r} outside the family's space")
    if law in ("binomial", "hyper") and theta > 1:
        raise ValueError(f"parameter {theta!r} outside [0, 1]")
    if law == "inverse" and not 0 < theta <= 1:
        raise ValueError("inverse sampling needs 0 < theta <= 1")
    if law == "hyper":
        _population(plan, theta)


def path_recursion(plan, theta, eta=0.0):
    """Forward recursion of trajectory mass; see ``PathDistribution``."""
    _check_theta(plan, theta)
    return _path_recursion(plan, float(theta), float(eta))


@lru_cache(maxsize=4096)
def _path_recursion(plan, theta, eta):
    law = law_of(plan)
    sizes = _stage_sizes(plan)
    s = len(sizes)
    budget = eta / (4 * s) if eta > 0 else 0.0
    stages, windows = [], []
    clipped_any = False
    dropped = 0.0
    survival = 0.0
    lo, hi, clipped = _window(plan, law, sizes[0], theta, budget)
    clipped_any |= clipped
    mass = _marginal(plan, law, sizes[0], theta, np.arange(lo, hi + 1))
    for ell in range(1, s + 1):
        b = plan.boundaries[ell - 1]
        xs = np.arange(lo, hi + 1)
        cont = b.mask(xs)
        sm = StageMass(ell, b.size, lo, mass, cont)
        stages.append(sm)
        windows.append((lo, hi))
        surv = sm.survive
        tot = float(surv.sum())
        if ell == s:
            survival = tot
            break
        if tot == 0.0:
            break
        if eta > 0 and tot <= eta / 2:
            dropped = tot
            break
        lo2, hi2, clipped = _window(plan, law, sizes[ell], theta, budget)
        clipped_any |= clipped
        mass = _step(plan, law, theta, surv, lo, b.size, sizes[ell], lo2, hi2)
        lo, hi = lo2, hi2
    wslack = eta / 2 if (clipped_any and eta > 0) else 0.0
    return PathDistribution(theta, stages, windows, wslack, dropped, survival, law)


def path_counts(plan):
    """Exact integer path-count coefficients nu(k, l) for binomial plans."""
    if law_of(plan) != "binomial":
        raise ValueError("path counts are defined for the binomial law")
    out = []
    prev, prev_n = None, 0
    for b in plan.boundaries:
        n = b.size
        if prev is None:
            cur = {k: math.comb(n, k) for k in range(n + 1)}
        else:
            dn = n - prev_n
            cur = {}
            for k0, v in prev.items():
                if v == 0 or not b_prev.contains(k0):
                    continue
                for j in range(dn + 1):
                    cur[k0 + j] = cur.get(k0 + j, 0) + v * math.comb(dn, j)
        out.append(cur)
        prev, prev_n, b_prev = cur, n, b
    return out


# ---------------------------------------------------------------------------
# events

def _tables(plan, pd):
    """Per stage: (stop mass, estimate, L, U) arrays on the window."""
    out = []
    for sm in pd.stages:
        th, L, U = stage_intervals(plan, sm.stage, sm.xs)
        out.append((sm.stop, th, L, U))
    return out


def event_probability(plan, theta, pred, eta=0.0):
    """(value, slack) for P{stop with pred(estimate, L, U)} at theta."""
    pd = path_recursion(plan, theta, eta)
    tot = 0.0
    for stop, th, L, U in _tables(plan, pd):
        m = pred(th, L, U)
        tot += float(stop[m].sum())
    return tot, pd.slack


def _miss(theta):
    return lambda th, L, U: (L >= theta - MISS_TOL) | (U <= theta + MISS_TOL)


def exact_complement(plan, theta, eta=0.0):
    """Complementary coverage P{L >= theta or U <= theta} with ASN and the
    stopping-stage distribution."""
    pd = path_recursion(plan, theta, eta)
    val = 0.0
    pmf = []
    for stop, th, L, U in _tables(plan, pd):
        val += float(stop[_miss(theta)(th, L, U)].sum())
        pmf.append(float(stop.sum()))
    pmf += [0.0] * (plan.s - len(pmf))
    slack = pd.slack
    kind = "exact" if slack == 0.0 else "truncated"
    return CoverageReport(float(theta), min(1.0, val), min(1.0, val + slack),
                          _asn_from(plan, pd, pmf), tuple(pmf), pd.survival, kind, slack)


def _asn_from(plan, pd, pmf):
    """E[n] = n_1 + sum (n_{l+1} - n_l) P{stop index > l}, bracketed."""
    sizes = _stage_sizes(plan)
    k = len(pd.stages)
    lo = up = float(sizes[0])
    for ell in range(1, len(sizes)):
        if ell <= k:
            s_lo = min(1.0, float(pd.stages[ell - 1].survive.sum()))
            s_up = s_lo
        else:
            s_lo, s_up = 0.0, pd.dropped
        s_up = max(s_lo, min(1.0, s_up + pd.window_slack))
        dn = sizes[ell] - sizes[ell - 1]
        lo += dn * s_lo
        up += dn * s_up
    if pd.law == "inverse":
        # Wald: E[count] = E[gamma at termination] / theta
        return BoundPair(lo / pd.theta, up / pd.theta)
    return BoundPair(lo, up)


def asn(plan, theta, eta=0.0):
    """Average sample number; a BoundPair (degenerate when exact)."""
    if law_of(plan) == "inverse" and theta <= 0:
        raise ValueError("ASN is infinite at theta = 0 under inverse sampling")
    return exact_complement(plan, theta, eta).asn


# ---------------------------------------------------------------------------
# CDV bounds

def _marginals(plan, theta, eta):
    law = law_of(plan)
    sizes = _stage_sizes(plan)
    budget = eta / (4 * len(sizes)) if eta > 0 else 0.0
    out = []
    for ell, n in enumerate(sizes, start=1):
        lo, hi, _ = _window(plan, law, n, theta, budget)
        xs = np.arange(lo, hi + 1)
        out.append((lo, hi, _marginal(plan, law, n, theta, xs)))
    return out


def _runs(mask):
    """Runs of True in a boolean array as (start, stop) inclusive indices."""
    m = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(m)
    starts = np.nonzero(d == 1)[0]
    stops = np.nonzero(d == -1)[0] - 1
    return list(zip(starts.tolist(), stops.tolist()))


def _ddv_polygon(plan, theta, ell, margs, event_mask_next):
    """P{D_{l-1}=0, X_l in event} through the rectangle/triangle split."""
    law = law_of(plan)
    n0, n1 = plan.boundaries[ell - 2].size, plan.boundaries[ell - 1].size
    dn = n1 - n0
    if law == "binomial":
        cU = lambda x: dist.binom_cdf(x, n0, theta)
        cV = lambda x: dist.binom_cdf(x, dn, theta)
    else:
        cU = lambda x: dist.poisson_cdf(x, n0 * theta)
        cV = lambda x: dist.poisson_cdf(x, dn * theta)
    pU = lambda x, y: 0.0 if x > y else cU(y) - cU(x - 1)
    pV = lambda x, y: 0.0 if x > y else cV(y) - cV(x - 1)
    lo1 = margs[ell - 1][0]
    vmax = dn if law == "binomial" else margs[ell - 1][1]
    tot = 0.0
    for clo, chi in plan.boundaries[ell - 2].cont:
        chi = margs[ell - 2][1] if chi is None else min(chi, margs[ell - 2][1])
        clo = max(clo, margs[ell - 2][0])
        if clo > chi:
            continue
        for r0, r1 in _runs(event_mask_next):
            tot += rect_prob_decompose(pU, pV, clo, chi, 0, vmax, lo1 + r0, lo1 + r1).total
    return tot


def cdv_bounds(plan, theta, r=1, event=None, eta=0.0, method="convolve"):
    """Bracket of P{event at termination} from r+1 consecutive decisions.

    r = 0 (SDV) and r = 1 (DDV) are built from stage marginals; r >= s - 1
    returns the exact value.  ``event(th, L, U)`` defaults to the
    interval missing theta.  ``method="polygon"`` computes the DDV terms
    through the rectangle/triangle split instead of convolution.
    """
    s = plan.s
    if plan.schedule.infinite:
        raise ValueError("CDV bounds need a finite-stage plan")
    if r < 0:
        raise ValueError("r must be >= 0")
    if r not in (0, 1) and r < s - 1:
        raise NotImplementedError("only r in {0, 1, s-1} is implemented")
    pred = event or _miss(theta)
    if r >= s - 1:
        v, slack = event_probability(plan, theta, pred, eta)
        return BoundPair(min(1.0, v), min(1.0, v + slack))
    law = law_of(plan)
    margs = _marginals(plan, theta, eta)
    hit = miss_free = 0.0
    for ell in range(1, s + 1):
        b = plan.boundaries[ell - 1]
        lo, hi, pm = margs[ell - 1]
        xs = np.arange(lo, hi + 1)
        stop = ~b.mask(xs)
        th, L, U = stage_intervals(plan, ell, xs)
        ev = pred(th, L, U)
        if r == 1 and ell > 1:
            plo, phi, ppm = margs[ell - 2]
            pb = plan.boundaries[ell - 2]
            surv = np.where(pb.mask(np.arange(plo, phi + 1)), ppm, 0.0)
            if method == "polygon" and law in ("binomial", "poisson"):
                hit += _ddv_polygon(plan, theta, ell, margs, stop & ev)
                miss_free += _ddv_polygon(plan, theta, ell, margs, stop & ~ev)
                continue
            w = _step(plan, law, theta, surv, plo, pb.size, b.size, lo, hi)
        else:
            w = pm
        hit += float(w[stop & ev].sum())
        miss_free += float(w[stop & ~ev].sum())
    slack = eta if eta > 0 else 0.0
    up = min(1.0, hit + slack)
    low = max(0.0, 1.0 - miss_free - slack)
    return BoundPair(min(low, up), up)


# ---------------------------------------------------------------------------
# interval bounding

def complement_bounds_on_interval(plan, a, b, eta=0.0):
    """Bracket of sup over theta in [a, b] of the complementary coverage.

    upper = P_b{L >= a} + P_a{U <= b}; lower = P_a{L >= b} + P_b{U <= a}.
    Raises TooWide when some stopping outcome violates
    {L >= a} => {estimate >= b} or {U <= b} => {estimate <= a}.
    """
    if a > b:
        raise ValueError("need a <= b")
    pa = path_recursion(plan, a, eta)
    pb = pa if b == a else path_recursion(plan, b, eta)
    ta, tb = _tables(plan, pa), _tables(plan, pb)
    for tabs in (ta, tb):
        for stop, th, L, U in tabs:
            st = stop > 0
            if np.any(st & (L >= a - MISS_TOL) & (th < b - MISS_TOL)) or \
               np.any(st & (U <= b + MISS_TOL) & (th > a + MISS_TOL)):
                raise TooWide(f"interval [{a!r}, {b!r}] is too wide; split it")
    up = lo = 0.0
    for stop, th, L, U in tb:
        up += float(stop[L >= a - MISS_TOL].sum())
        lo += float(stop[U <= a].sum())
    for stop, th, L, U in ta:
        up += float(stop[U <= b + MISS_TOL].sum())
        lo += float(stop[L >= b].sum())
    up = min(1.0, up + pa.slack + (pb.slack if pb is not pa else 0.0))
    return BoundPair(min(lo, up), up)


def parameter_range(plan):
    """Natural parameter range of the plan's family."""
    law = law_of(plan)
    if law == "poisson":
        return 0.0, None
    return 0.0, 1.0


def lattice_points(plan, a, b, max_points=2_000_000):
    """{a, b} with the L and U values of stopping outcomes that fall in [a, b]."""
    if a > b:
        raise ValueError("need a <= b")
    law = law_of(plan)
    pts = {float(a), float(b)}
    total = 0
    for ell, bd in enumerate(plan.boundaries, start=1):
        n = bd.size
        if law == "binomial":
            chunks = [np.arange(0, n + 1)]
        elif law == "hyper":
            chunks = [np.arange(0, n + 1)]
        else:
            chunks = _open_chunks(plan, ell, law, n, a, b)
        for xs in chunks:
            total += len(xs)
            if total > max_points:
                raise ValueError("lattice too large; use a narrower range or AMCA")
            stop = ~bd.mask(xs)
            th, L, U = stage_intervals(plan, ell, xs)
            for v in (L[stop], U[stop]):
                sel = v[(v >= a) & (v <= b)]
                pts.update(sel.tolist())
    out = sorted(pts)
    if law == "hyper":
        N = plan.N
        out = [v for v in out if abs(v * N - round(v * N)) < 1e-9]
        out = sorted({round(v * N) / N for v in out} | {a, b})
    return out


def _open_chunks(plan, ell, law, n, a, b):
    """Outcome ranges for unbounded supports, walking until L and U leave [a, b]."""
    x = n if law == "inverse" else 0
    step = 4096
    while True:
        xs = np.arange(x, x + step)
        th, L, U = stage_intervals(plan, ell, xs)
        yield xs
        if law == "poisson" and L[-1] > b and U[-1] > b:
            return
        if law == "inverse" and L[-1] < a and U[-1] < a:
            return
        x += step
        step = min(step * 2, 1 << 20)
