"""Plan synthesis: stage schedules, stopping boundaries and stage decisions.

Every family is a small design class that knows four things: the direct
stopping predicate D(n, x) at confidence share zd = zeta * delta_l, a fast
construction of the continue set (roots, closed forms or scans), the
random-interval map x -> (L, U), and the schedule of stage sizes.  The fast
constructions are snapped against the direct predicate at their endpoints,
so the stored integer intervals agree with the predicate exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import distributions as dist
from .distributions import mb, mfun, mi, mp
from .numerics import NoBracketError, bisect_monotone, root_or_clamp

__all__ = [
    "ErrorSpec", "Schedule", "StageBoundary", "Plan", "Decision", "FAMILIES",
    "build_schedule", "build_plan", "rebuild_boundaries", "evaluate", "get_design",
    "stage_shares", "horizon",
    "binom_abs_boundaries", "binom_mix_boundaries", "binom_rel_inverse_boundaries",
    "binom_rel_noninverse_boundaries", "poisson_boundaries", "finite_pop_boundaries",
    "bw_ci_boundaries", "bounded_mean_decision", "truncated_inverse_design",
    "finite_pop_limits", "stage_intervals", "law_of", "with_zeta",
]

ROOT_TOL = 1e-18         # below one ulp on [0, 1]: bisection ends on adjacent floats
DEFAULT_ETA = 1e-8


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True)
class ErrorSpec:
    """Precision target: margins and confidence parameter delta."""
    kind: str
    delta: float
    eps: float | None = None
    eps_a: float | None = None
    eps_r: float | None = None

    def __post_init__(self):
        if self.kind not in ("absolute", "relative", "mixed", "fixed-width"):
            raise ValueError(f"unknown error kind {self.kind!r}")
        if not 0 < self.delta < 1:
            raise ValueError(f"need 0 < delta < 1, got {self.delta!r}")
        if self.kind == "mixed":
            if self.eps_a is None or self.eps_r is None or self.eps_a <= 0 or self.eps_r <= 0:
                raise ValueError("mixed error needs positive eps_a and eps_r")
        elif self.eps is None or self.eps <= 0:
            raise ValueError(f"{self.kind} error needs a positive eps")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("kind", "delta", "eps", "eps_a", "eps_r")
                if getattr(self, k) is not None}


@dataclass(frozen=True)
class Schedule:
    kind: str                 # "sizes" or "thresholds"
    values: tuple
    deltas: tuple             # per-stage confidence share delta_l
    tau: int
    rho: float
    infinite: bool = False
    single_stage: bool = False

    @property
    def s(self):
        return len(self.values)

    def C(self, ell):
        """Ratio sequence C_ell = rho**(-ell)."""
        return self.rho ** (-ell)


@dataclass(frozen=True)
class StageBoundary:
    """Continue set of one stage as disjoint inclusive integer intervals.

    ``hi=None`` marks an interval unbounded above (Poisson sums, inverse
    sampling counts).  ``flags`` records clamped roots and other notes.
    """
    stage: int
    size: int
    cont: tuple
    flags: tuple = ()

    @property
    def empty(self):
        return len(self.cont) == 0

    def contains(self, x):
        for lo, hi in self.cont:
            if x >= lo and (hi is None or x <= hi):
                return True
        return False

    def mask(self, xs):
        xs = np.asarray(xs)
        m = np.zeros(xs.shape, dtype=bool)
        for lo, hi in self.cont:
            m |= (xs >= lo) if hi is None else ((xs >= lo) & (xs <= hi))
        return m


@dataclass(frozen=True)
class Plan:
    family: str
    rule: str
    spec: ErrorSpec
    zeta: float
    schedule: Schedule
    boundaries: tuple
    N: int | None = None
    options: tuple = ()
    tuned: bool = False

    @property
    def opts(self):
        return dict(self.options)

    @property
    def s(self):
        return self.schedule.s

    def zd(self, stage):
        """zeta * delta_l for 1-based stage index."""
        return self.zeta * self.schedule.deltas[stage - 1]


@dataclass(frozen=True)
class Decision:
    stop: bool
    stage: int
    n: int
    estimate: float | None = None
    lower: float | None = None
    upper: float | None = None


# ---------------------------------------------------------------------------
# helpers

def _ceil(v):
    # absorbs float noise on values that are integers in exact arithmetic
    return int(math.ceil(v - 1e-9))


def _tau(ratio, rho):
    """Largest integer tau with rho**-(tau-1) >= ratio (0 if none)."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    if ratio > 1 + 1e-12:
        return 0
    return int(math.floor(math.log(1.0 / ratio) / math.log(rho) + 1e-12)) + 1


def stage_shares(delta, tau, count):
    """delta_l = delta for l <= tau, delta * 2**(tau - l) beyond."""
    return tuple(delta if l <= tau else delta * 2.0 ** (tau - l) for l in range(1, count + 1))


def horizon(tau, zd, eta=DEFAULT_ETA):
    """Last materialized stage of an infinite design."""
    return tau + 1 + max(0, math.ceil(math.log(zd / eta) / math.log(2)))


def _snap_block(lo, hi, inside, lo_min=0, hi_max=None):
    """Adjust an integer interval [lo, hi] so that it matches the block
    predicate ``inside`` at both ends.  Returns None for an empty block."""
    if hi is not None and lo > hi:
        # still try the neighbourhood of the degenerate interval
        hi = lo
    lo = max(lo, lo_min)
    if hi_max is not None and hi is not None:
        hi = min(hi, hi_max)
    # grow / shrink lower end
    while lo - 1 >= lo_min and inside(lo - 1):
        lo -= 1
    while (hi is None or lo <= hi) and not inside(lo):
        lo += 1
        if hi is None and lo > 10 ** 12:
            return None
    if hi is not None and lo > hi:
        return None
    if hi is None:
        return (lo, None)
    while (hi_max is None or hi + 1 <= hi_max) and inside(hi + 1):
        hi += 1
    while hi >= lo and not inside(hi):
        hi -= 1
    if hi < lo:
        return None
    return (lo, hi)


def _merge(blocks):
    blocks = sorted(b for b in blocks if b is not None)
    out = []
    for lo, hi in blocks:
        if out:
            plo, phi = out[-1]
            if phi is None:
                continue
            if lo <= phi + 1:
                out[-1] = (plo, None if hi is None else max(phi, hi))
                continue
        out.append((lo, hi))
    return tuple(out)


def _strict_lo(v):
    """Smallest integer > v."""
    return math.floor(v) + 1


def _strict_hi(v):
    """Largest integer < v."""
    return math.ceil(v) - 1


def _scan_cont(n, stop, lo=0, hi=None):
    """Continue set by scanning x in [lo, hi] with the direct predicate."""
    hi = n if hi is None else hi
    xs = [x for x in range(lo, hi + 1) if not stop(x)]
    blocks = []
    for x in xs:
        if blocks and blocks[-1][1] == x - 1:
            blocks[-1][1] = x
        else:
            blocks.append([x, x])
    return tuple((a, b) for a, b in blocks)


def _upray_scan(stop, start, cap, probes=64):
    """Continue set assumed of the form [m_c, inf).  m_c is located by
    bisection; the shape assumption is then checked on ``probes`` evenly
    spaced points up to ``cap`` plus the neighbourhood of m_c."""
    if not stop(start):
        x_c = start
    else:
        hi = max(cap, start + 1)
        while stop(hi):
            hi = 2 * hi + 1
            if hi > 10 ** 13:
                return ()
        lo = start
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if stop(mid):
                lo = mid
            else:
                hi = mid
        x_c = hi
    top = max(cap, 2 * x_c)
    pts = set(np.linspace(start, top, probes).astype(int).tolist())
    if x_c < 10 ** 7:
        # beyond this scale the tail sums cannot resolve single lattice steps
        pts.update(range(max(start, x_c - 8), x_c + 9))
    else:
        pts = {x for x in pts if abs(x - x_c) > 1e-6 * x_c}
    for x in sorted(pts):
        if (x >= x_c) == stop(x):
            raise RuntimeError(f"continue set is not an up-ray near {x} (boundary {x_c})")
    return ((x_c, None),)


def _scan_within(n, stop, blocks, hi_max, pad=2):
    """Continue set of an exact-tail rule, scanning only inside the continue
    blocks of the matching Chernoff rule (padded).  Exact tails never exceed
    their Chernoff bounds, so every outcome outside those blocks stops."""
    cand = {0}
    if hi_max is not None:
        cand.add(hi_max)
    for lo, hi in blocks:
        if hi is None:
            raise ValueError("unbounded Chernoff block; scan needs a cap")
        a = max(0, lo - pad)
        b = hi + pad if hi_max is None else min(hi_max, hi + pad)
        cand.update(range(a, b + 1))
    xs = sorted(x for x in cand if not stop(x))
    out = []
    for x in xs:
        if out and out[-1][1] == x - 1:
            out[-1][1] = x
        else:
            out.append([x, x])
    return tuple((a, b) for a, b in out)


# ---------------------------------------------------------------------------
# designs

class _Design:
    law = "binomial"          # binomial | poisson | hyper | inverse
    infinite = False
    rules = ()
    sched_kind = "sizes"

    def __init__(self, spec, rule, opts, N=None):
        if rule not in self.rules:
            raise ValueError(f"rule {rule!r} not available for this family; "
                             f"choose from {self.rules}")
        self.spec, self.rule, self.opts, self.N = spec, rule, opts, N
        self.validate()

    def validate(self):
        pass

    # support of the stage variable given stage size n
    def support(self, n):
        return 0, n

    def estimate(self, n, x):
        return np.asarray(x, dtype=float) / n

    def stops(self, n, x, zd):
        raise NotImplementedError

    def continue_set(self, n, zd, final=False):
        lo, hi = self.support(n)
        return _scan_cont(n, lambda x: self.stops(n, x, zd), lo, hi), ()

    def limits(self, n, x):
        raise NotImplementedError

    def base_and_ratio(self, zd):
        raise NotImplementedError

    def zeta_safe(self, sched):
        return 1.0 / (2 * (sched.tau + 1)) if self.infinite else 1.0 / (2 * sched.s)

    def stage_boundary(self, stage, n, zd, final=False):
        cont, flags = self.continue_set(n, zd, final)
        return StageBoundary(stage, int(n), tuple(cont), tuple(flags))


# -- interval maps ----------------------------------------------------------

def _abs_limits(th, eps):
    return th - eps, th + eps


def _rel_limits(th, eps):
    return th / (1 + eps), th / (1 - eps)


def _mix_limits(th, ea, er):
    return np.minimum(th - ea, th / (1 + er)), np.maximum(th + ea, th / (1 - er))


# -- binomial absolute ------------------------------------------------------

def _zstar(eps):
    """Maximizer of mb(z, z + eps) on (1/2 - eps, 1/2)."""
    def dg(z):
        return (math.log((z + eps) * (1 - z) / (z * (1 - z - eps)))
                - eps / ((z + eps) * (1 - z - eps)))
    lo, hi = max(0.5 - eps, 1e-300), 0.5
    try:
        return bisect_monotone(dg, lo + 1e-15, hi, 0.0, ROOT_TOL)
    except NoBracketError:
        return 0.5 - eps / 2


class BinomialAbs(_Design):
    rules = ("chernoff", "cdf", "massart", "asymptotic")

    def validate(self):
        if self.spec.kind != "absolute" or not 0 < self.spec.eps < 0.5:
            raise ValueError("binomial absolute error needs 0 < eps < 1/2")

    def limits(self, n, x):
        return _abs_limits(self.estimate(n, x), self.spec.eps)

    def stops(self, n, k, zd):
        eps = self.spec.eps
        p = k / n
        if self.rule == "cdf":
            return (dist.binom_cdf(k, n, p + eps) <= zd
                    and dist.binom_sf(k - 1, n, p - eps) <= zd)
        if self.rule == "chernoff":
            w = 0.5 - abs(0.5 - p)
            return mb(w, w + eps) <= math.log(zd) / n
        if self.rule == "massart":
            return (abs(p - 0.5) - 2 * eps / 3) ** 2 >= 0.25 + eps ** 2 * n / (2 * math.log(zd))
        return n >= p * (1 - p) * 2 * math.log(1 / zd) / eps ** 2

    def continue_set(self, n, zd, final=False):
        eps = self.spec.eps
        c = math.log(zd) / n
        stop = lambda k: self.stops(n, k, zd)
        if self.rule == "cdf":
            ch, _ = BinomialAbs(self.spec, "chernoff", self.opts).continue_set(n, zd)
            return _scan_within(n, stop, ch, n), ()
        if self.rule == "chernoff":
            zs = _zstar(eps)
            g = lambda z: mb(z, z + eps)
            if g(zs) <= c:
                return (), ("empty",)
            flags = []
            if g(0.0) > c:
                zlo, flags = 0.0, ["z_lo clamped"]
                lo = 0
            else:
                zlo = bisect_monotone(g, 0.0, zs, c, ROOT_TOL)
                lo = _strict_lo(n * zlo)
            zhi = bisect_monotone(g, zs, 1 - eps, c, ROOT_TOL)
            hi = _strict_hi(n * zhi)
            inside = lambda k: 0 <= k <= n and not stop(k)
            # the two mirrored blocks, each snapped against the predicate
            b1 = _snap_block(lo, min(hi, n // 2), lambda k: inside(k) and k <= n / 2, 0, n)
            b2 = _snap_block(n - min(hi, n // 2), n - lo,
                             lambda k: inside(k) and k >= n / 2, 0, n)
            self._roots = (zs, zlo, zhi)
            return _merge([b1, b2]), tuple(flags)
        if self.rule == "massart":
            R = 0.25 + eps ** 2 * n / (2 * math.log(zd))
            if R <= 0:
                return (), ("empty",)
            r = math.sqrt(R)
            a, b = 2 * eps / 3 - r, 2 * eps / 3 + r  # continue iff a < |p - 1/2| < b
            inside = lambda k: 0 <= k <= n and not stop(k)
            blocks = []
            if a < 0:
                blocks.append(_snap_block(_strict_lo(n * (0.5 - b)), _strict_hi(n * (0.5 + b)),
                                          inside, 0, n))
            else:
                blocks.append(_snap_block(_strict_lo(n * (0.5 - b)), _strict_hi(n * (0.5 - a)),
                                          lambda k: inside(k) and k < n / 2, 0, n))
                blocks.append(_snap_block(_strict_lo(n * (0.5 + a)), _strict_hi(n * (0.5 + b)),
                                          lambda k: inside(k) and k > n / 2, 0, n))
            return _merge(blocks), ()
        # asymptotic: continue iff p(1-p) > q
        q = n * eps ** 2 / (2 * math.log(1 / zd))
        if q >= 0.25:
            return (), ("empty",)
        h = math.sqrt(0.25 - q)
        inside = lambda k: 0 <= k <= n and not stop(k)
        return _merge([_snap_block(_strict_lo(n * (0.5 - h)), _strict_hi(n * (0.5 + h)),
                                   inside, 0, n)]), ()

    def base_and_ratio(self, zd):
        eps = self.spec.eps
        if self.rule == "cdf":
            n1 = math.log(zd) / math.log(1 - eps)
            ns = self._cdf_sure_stop(zd)
            return ns, n1 / ns
        base = math.log(1 / zd) / (2 * eps ** 2)
        if self.rule == "chernoff":
            return base, 2 * eps ** 2 / math.log(1 / (1 - eps))
        if self.rule == "massart":
            return base, (24 * eps - 16 * eps ** 2) / 9
        return base, 2 * eps

    def _sure_stop(self, n, zd):
        order = sorted(range(n + 1), key=lambda k: abs(k - n / 2))
        return all(self.stops(n, k, zd) for k in order)

    def _cdf_sure_stop(self, zd):
        hi = _ceil(math.log(1 / zd) / (2 * self.spec.eps ** 2))
        lo = max(1, int(math.log(zd) / math.log(1 - self.spec.eps)))
        while lo < hi:
            mid = (lo + hi) // 2
            if self._sure_stop(mid, zd):
                hi = mid
            else:
                lo = mid + 1
        while hi > 1 and self._sure_stop(hi - 1, zd):
            hi -= 1
        return hi


# -- binomial mixed ---------------------------------------------------------

def _check_mix(ea, er, rule):
    if rule == "massart":
        if not (0 < ea < 3 / 8 and 6 * ea / (3 - 2 * ea) < er < 1):
            raise ValueError(
                f"mixed Massart rule needs 0 < eps_a < 3/8 and 6 eps_a/(3 - 2 eps_a) < eps_r < 1; "
                f"got eps_a={ea}, eps_r={er}")
    elif not (0 < ea < 35 / 94 and 70 * ea / (35 - 24 * ea) < er < 1):
        raise ValueError(
            f"mixed error needs 0 < eps_a < 35/94 and 70 eps_a/(35 - 24 eps_a) < eps_r < 1; "
            f"got eps_a={ea}, eps_r={er}")


class BinomialMix(_Design):
    rules = ("chernoff", "cdf", "massart")

    def validate(self):
        if self.spec.kind != "mixed":
            raise ValueError("binomial-mix needs a mixed error spec")
        _check_mix(self.spec.eps_a, self.spec.eps_r, self.rule)

    def limits(self, n, x):
        return _mix_limits(self.estimate(n, x), self.spec.eps_a, self.spec.eps_r)

    def _massart_blocks(self, n, zd):
        ea, er = self.spec.eps_a, self.spec.eps_r
        lz = math.log(zd)
        arg = 0.25 + n * ea ** 2 / (2 * lz)
        if arg < 0:
            return []
        r = math.sqrt(arg)
        ua = 6 * (1 - er) * (3 - er) * lz / (2 * (3 - er) ** 2 * lz - 9 * n * er ** 2)
        ub = 6 * (1 + er) * (3 + er) * lz / (2 * (3 + er) ** 2 * lz - 9 * n * er ** 2)
        return [(0.5 - 2 * ea / 3 - r, ua), (0.5 + 2 * ea / 3 - r, ub)]

    def _block_I(self, n, k, c):
        p = k / n
        lo = min(p - self.spec.eps_a, p / (1 + self.spec.eps_r))
        return mb(p, lo) > c

    def _block_II(self, n, k, c):
        p = k / n
        up = max(p + self.spec.eps_a, p / (1 - self.spec.eps_r))
        return mb(p, up) > c

    def stops(self, n, k, zd):
        p = k / n
        L, U = _mix_limits(p, self.spec.eps_a, self.spec.eps_r)
        if self.rule == "cdf":
            return dist.binom_cdf(k, n, U) <= zd and dist.binom_sf(k - 1, n, L) <= zd
        if self.rule == "chernoff":
            return max(mb(p, L), mb(p, U)) <= math.log(zd) / n
        return not any(a < p < b for a, b in self._massart_blocks(n, zd))

    def roots(self, n, zd):
        """Boundary roots (z_a^-, z_r^+, z_a^+, z_r^-) with status flags."""
        ea, er = self.spec.eps_a, self.spec.eps_r
        ps = ea / er
        c = math.log(zd) / n
        out = {}
        out["zr+"] = root_or_clamp(lambda z: mb(z, z / (1 + er)), ps + ea, 1.0, c, ROOT_TOL)
        out["za-"] = root_or_clamp(lambda z: mb(z, z - ea), ea, ps + ea, c, ROOT_TOL)
        out["zr-"] = root_or_clamp(lambda z: mb(z, z / (1 - er)), ps - ea, 1 - er, c, ROOT_TOL)
        out["za+"] = root_or_clamp(lambda z: mb(z, z + ea), 0.0, ps - ea, c, ROOT_TOL)
        return out

    def continue_set(self, n, zd, final=False):
        ea, er = self.spec.eps_a, self.spec.eps_r
        if self.rule == "cdf":
            ch, _ = BinomialMix(self.spec, "chernoff", self.opts).continue_set(n, zd)
            return _scan_within(n, lambda k: self.stops(n, k, zd), ch, n), ()
        if self.rule == "massart":
            blocks = []
            for a, b in self._massart_blocks(n, zd):
                blocks.append(_snap_block(_strict_lo(n * a), _strict_hi(n * b),
                                          lambda k, a=a, b=b: 0 <= k <= n and a < k / n < b, 0, n))
            return _merge(blocks), ()
        ps = ea / er
        c = math.log(zd) / n
        r = self.roots(n, zd)
        flags = []
        blocks = []
        # statement I
        zr, st_r = r["zr+"]
        za, st_a = r["za-"]
        if st_a == "below" or st_r == "below":
            flags.append("I empty")
        else:
            lo = 0 if st_a == "above" else _strict_lo(n * za)
            hi = n if st_r == "above" else _strict_hi(n * zr)
            if st_r == "above":
                flags.append("z_r+ clamped")
            blocks.append(_snap_block(lo, hi, lambda k: 0 <= k <= n and self._block_I(n, k, c), 0, n))
        # statement II, three cases
        zrm, st_rm = r["zr-"]
        zap, st_ap = r["za+"]
        if n < math.log(zd) / math.log(1 - ea):
            case = 1
        elif mb(ps - ea, ps) < 0 and n < math.log(zd) / mb(ps - ea, ps):
            case = 2
        else:
            case = 3
        flags.append(f"II case {case}")
        if case < 3 and st_rm != "below":
            hi = n if st_rm == "above" else _strict_hi(n * zrm)
            lo = 0 if case == 1 or st_ap == "above" else _strict_lo(n * zap)
            blocks.append(_snap_block(lo, hi, lambda k: 0 <= k <= n and self._block_II(n, k, c), 0, n))
        return _merge(blocks), tuple(flags)

    def base_and_ratio(self, zd):
        ea, er = self.spec.eps_a, self.spec.eps_r
        ps = ea / er
        if self.rule == "massart":
            t = 1 / ea - 1 / er - 1 / 3
            return 2 * t * (1 / er + 1 / 3) * math.log(1 / zd), (2 / 3) / t
        m = mb(ps + ea, ps)
        return math.log(zd) / m, -m / math.log(1 + er)


# -- binomial relative, inverse sampling ------------------------------------

class BinomialRelInverse(_Design):
    law = "inverse"
    rules = ("chernoff", "cdf", "massart")
    sched_kind = "thresholds"

    def validate(self):
        if self.spec.kind != "relative" or not 0 < self.spec.eps < 1:
            raise ValueError("relative error needs 0 < eps < 1")

    def support(self, gamma):
        return gamma, None

    def estimate(self, gamma, m):
        return gamma / np.asarray(m, dtype=float)

    def limits(self, gamma, m):
        return _rel_limits(self.estimate(gamma, m), self.spec.eps)

    def z_threshold(self, gamma, zd):
        """Stop iff gamma/m >= z (Chernoff root or Massart closed form)."""
        eps = self.spec.eps
        c = math.log(zd) / gamma
        if self.rule == "massart":
            return 1 + 2 * eps / (3 + eps) + 9 * eps ** 2 * gamma / (2 * (3 + eps) ** 2 * math.log(zd))
        f = lambda z: mi(z, z / (1 + eps))
        if f(1.0) > c:
            return math.inf
        lim0 = eps / (1 + eps) - math.log(1 + eps)
        if lim0 <= c:
            return 0.0
        return bisect_monotone(f, 1e-300, 1.0, c, ROOT_TOL)

    def stops(self, gamma, m, zd):
        eps = self.spec.eps
        p = gamma / m
        if self.rule == "cdf":
            return (dist.binom_cdf(gamma - 1, m - 1, p / (1 - eps)) <= zd
                    and dist.binom_sf(gamma - 1, m, p / (1 + eps)) <= zd)
        if self.rule == "chernoff":
            return mi(p, p / (1 + eps)) <= math.log(zd) / gamma
        return p >= self.z_threshold(gamma, zd)

    def continue_set(self, gamma, zd, final=False):
        stop = lambda m: self.stops(gamma, m, zd)
        if self.rule == "cdf":
            zc = BinomialRelInverse(self.spec, "chernoff", self.opts).z_threshold(gamma, zd)
            if zc == 0.0:
                return (), ("empty",)
            cap = 4 * gamma / zc if math.isfinite(zc) and zc > 0 else 4 * gamma
            out = _upray_scan(stop, gamma, int(cap) + 1)
            return out, ((f"verified to m={int(cap) + 1}",) if out else ("empty",))
        z = self.z_threshold(gamma, zd)
        if z <= 0:
            return (), ("empty",)
        if not math.isfinite(z) or z > 1:
            return ((gamma, None),), ("z clamped",)
        blk = _snap_block(_strict_lo(gamma / z), None, lambda m: m >= gamma and not stop(m), gamma)
        return ((blk,) if blk else ()), ()

    def base_and_ratio(self, zd):
        eps = self.spec.eps
        if self.rule == "massart":
            return (2 * (1 + eps) * (3 + eps) * math.log(1 / zd) / (3 * eps ** 2),
                    2 * eps / (3 * (1 + eps)))
        return ((1 + eps) * math.log(zd) / (eps - (1 + eps) * math.log(1 + eps)),
                1 - eps / ((1 + eps) * math.log(1 + eps)))


# -- binomial relative, noninverse (infinite stages) ------------------------

class BinomialRel(_Design):
    infinite = True
    rules = ("chernoff", "cdf", "massart")

    def validate(self):
        if self.spec.kind != "relative" or not 0 < self.spec.eps < 1:
            raise ValueError("relative error needs 0 < eps < 1")

    def limits(self, n, x):
        return _rel_limits(self.estimate(n, x), self.spec.eps)

    def z_threshold(self, n, zd):
        """Stop iff K/n >= z.  The Chernoff root uses the continuous
        extension mb(z, z/(1+eps)) -> 0 as z -> 0, so K = 0 continues."""
        eps = self.spec.eps
        lz = math.log(zd)
        if self.rule == "massart":
            return 6 * (1 + eps) * (3 + eps) * lz / (2 * (3 + eps) ** 2 * lz - 9 * n * eps ** 2)
        c = lz / n
        f = lambda z: mb(z, z / (1 + eps)) if z > 0 else 0.0
        if f(1.0) > c:
            return math.inf
        return bisect_monotone(f, 0.0, 1.0, c, ROOT_TOL)

    def stops(self, n, k, zd):
        eps = self.spec.eps
        p = k / n
        if self.rule == "cdf":
            return (dist.binom_cdf(k, n, p / (1 - eps)) <= zd
                    and dist.binom_sf(k - 1, n, p / (1 + eps)) <= zd)
        if self.rule == "chernoff":
            return k > 0 and mb(p, p / (1 + eps)) <= math.log(zd) / n
        return p >= self.z_threshold(n, zd)

    def continue_set(self, n, zd, final=False):
        stop = lambda k: self.stops(n, k, zd)
        if self.rule == "cdf":
            # stop set is an up-ray in K: locate its start by bisection
            if not stop(n):
                return ((0, n),), ("no stop",)
            lo, hi = 0, n
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if stop(mid):
                    hi = mid
                else:
                    lo = mid
            blk = _snap_block(0, hi - 1, lambda k: 0 <= k <= n and not stop(k), 0, n)
            return ((blk,) if blk else ()), ()
        z = self.z_threshold(n, zd)
        hi = n if not math.isfinite(z) else min(n, _strict_hi(n * z))
        blk = _snap_block(0, max(hi, 0), lambda k: 0 <= k <= n and not stop(k), 0, n)
        return ((blk,) if blk else ()), ()

    def base_and_ratio(self, zd):
        eps = self.spec.eps
        pd = self.opts.get("p_design", 0.1)
        m = mb(pd, pd / (1 + eps))
        return math.log(zd) / m, -m / math.log(1 + eps)


# -- Poisson ----------------------------------------------------------------

def _pois_upper(k, mu):
    """P{Poisson(mu) >= k}; zero for negative mu (parameter outside the space)."""
    if mu < 0:
        return 0.0
    return dist.poisson_sf(k - 1, mu)


def _pois_lower(k, mu):
    """P{Poisson(mu) <= k}; zero for negative mu."""
    return dist.poisson_cdf(k, mu)


class PoissonAbs(_Design):
    law = "poisson"
    infinite = True
    rules = ("chernoff", "cdf")

    def validate(self):
        if self.spec.kind != "absolute":
            raise ValueError("poisson-abs needs an absolute error spec")

    def support(self, n):
        return 0, None

    def limits(self, n, x):
        return _abs_limits(self.estimate(n, x), self.spec.eps)

    def z_threshold(self, n, zd):
        """Stop iff K/n <= z; -inf when no K stops."""
        eps = self.spec.eps
        c = math.log(zd) / n
        if -eps > c:
            return -math.inf
        f = lambda z: mp(z, z + eps)
        hi = 1.0
        while f(hi) <= c:
            hi *= 2
        return bisect_monotone(f, 0.0, hi, c, ROOT_TOL)

    def stops(self, n, k, zd):
        eps = self.spec.eps
        lam = k / n
        if self.rule == "cdf":
            return (_pois_lower(k, n * (lam + eps)) <= zd
                    and _pois_upper(k, n * (lam - eps)) <= zd)
        return mp(lam, lam + eps) <= math.log(zd) / n

    def continue_set(self, n, zd, final=False):
        stop = lambda k: self.stops(n, k, zd)
        zc = self.z_threshold(n, zd)
        if self.rule == "cdf":
            cap = 4 * (int(n * max(zc, 0)) + 10) if math.isfinite(zc) else 10 * n
            out = _upray_scan(stop, 0, cap)
            return out, ((f"verified to K={cap}",) if out else ("empty",))
        if zc == -math.inf:
            return ((0, None),), ("no stop",)
        blk = _snap_block(_strict_lo(n * zc) if n * zc != math.floor(n * zc) else int(n * zc) + 1,
                          None, lambda k: k >= 0 and not stop(k), 0)
        return ((blk,) if blk else ()), ()

    def base_and_ratio(self, zd):
        eps = self.spec.eps
        ld = self.opts.get("lam_design", 1.0)
        m = mp(ld, ld + eps)
        return math.log(zd) / m, -m / eps


class PoissonRel(_Design):
    law = "poisson"
    infinite = True
    rules = ("chernoff", "cdf")

    def validate(self):
        if self.spec.kind != "relative" or not 0 < self.spec.eps < 1:
            raise ValueError("relative error needs 0 < eps < 1")

    def support(self, n):
        return 0, None

    def limits(self, n, x):
        return _rel_limits(self.estimate(n, x), self.spec.eps)

    def z_threshold(self, n, zd):
        eps = self.spec.eps
        return (math.log(zd) / n) * (1 + eps) / (eps - (1 + eps) * math.log(1 + eps))

    def stops(self, n, k, zd):
        eps = self.spec.eps
        lam = k / n
        if self.rule == "cdf":
            return (_pois_lower(k, n * lam / (1 - eps)) <= zd
                    and _pois_upper(k, n * lam / (1 + eps)) <= zd)
        return k > 0 and mp(lam, lam / (1 + eps)) <= math.log(zd) / n

    def continue_set(self, n, zd, final=False):
        stop = lambda k: self.stops(n, k, zd)
        z = self.z_threshold(n, zd)
        if self.rule == "cdf":
            # stop set is an up-ray in K
            hi = max(1, int(n * z) + 2)
            while not stop(hi):
                hi *= 2
            lo = -1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if stop(mid):
                    hi = mid
                else:
                    lo = mid
            blk = _snap_block(0, hi - 1, lambda k: k >= 0 and not stop(k), 0)
            return ((blk,) if blk else ()), ()
        blk = _snap_block(0, max(0, _strict_hi(n * z)), lambda k: k >= 0 and not stop(k), 0)
        return ((blk,) if blk else ()), ()

    def base_and_ratio(self, zd):
        eps = self.spec.eps
        l1 = self.opts.get("lam_lo", 1.0)
        l2 = self.opts.get("lam_hi", 4.0)
        m1 = mp(l1, l1 / (1 + eps))
        return math.log(zd) / m1, m1 / mp(l2, l2 / (1 + eps))


class PoissonMix(_Design):
    law = "poisson"
    rules = ("chernoff", "cdf")

    def validate(self):
        if self.spec.kind != "mixed" or not (0 < self.spec.eps_a and 0 < self.spec.eps_r < 1):
            raise ValueError("poisson-mix needs eps_a > 0 and 0 < eps_r < 1")

    def support(self, n):
        return 0, None

    def limits(self, n, x):
        return _mix_limits(self.estimate(n, x), self.spec.eps_a, self.spec.eps_r)

    def stops(self, n, k, zd):
        lam = k / n
        L, U = _mix_limits(lam, self.spec.eps_a, self.spec.eps_r)
        if self.rule == "cdf":
            return _pois_lower(k, n * U) <= zd and _pois_upper(k, n * L) <= zd
        return max(mp(lam, L), mp(lam, U)) <= math.log(zd) / n

    def roots(self, n, zd):
        ea, er = self.spec.eps_a, self.spec.eps_r
        ls = ea / er
        c = math.log(zd) / n
        out = {}
        # the two relative-branch equations are linear in z
        out["zr+"] = (c / (er / (1 + er) - math.log(1 + er)), "root")
        out["zr-"] = (c / (-er / (1 - er) - math.log(1 - er)), "root")
        out["za-"] = root_or_clamp(lambda z: mp(z, z - ea), ea, ls + ea, c, ROOT_TOL)
        out["za+"] = root_or_clamp(lambda z: mp(z, z + ea), 0.0, max(ls - ea, 0.0), c, ROOT_TOL)
        return out

    def _block_I(self, n, k, c):
        lam = k / n
        return mp(lam, min(lam - self.spec.eps_a, lam / (1 + self.spec.eps_r))) > c

    def _block_II(self, n, k, c):
        lam = k / n
        return mp(lam, max(lam + self.spec.eps_a, lam / (1 - self.spec.eps_r))) > c

    def continue_set(self, n, zd, final=False):
        ea, er = self.spec.eps_a, self.spec.eps_r
        ls = ea / er
        c = math.log(zd) / n
        r = self.roots(n, zd)
        if self.rule == "cdf":
            ch, _ = PoissonMix(self.spec, "chernoff", self.opts).continue_set(n, zd)
            return _scan_within(n, lambda k: self.stops(n, k, zd), ch, None), ()
        flags, blocks = [], []
        zr, _ = r["zr+"]
        za, st_a = r["za-"]
        if zr <= ls + ea or st_a == "below":
            flags.append("I empty")
        else:
            lo = 0 if st_a == "above" else _strict_lo(n * za)
            blocks.append(_snap_block(lo, _strict_hi(n * zr),
                                      lambda k: k >= 0 and self._block_I(n, k, c), 0))
        zrm, _ = r["zr-"]
        zap, st_ap = r["za+"]
        if n < math.log(1 / zd) / ea:
            case = 1
        elif ls > ea and n < math.log(zd) / mp(ls - ea, ls):
            case = 2
        else:
            case = 3
        flags.append(f"II case {case}")
        if case < 3:
            lo = 0 if case == 1 or st_ap == "above" else _strict_lo(n * zap)
            blocks.append(_snap_block(lo, _strict_hi(n * zrm),
                                      lambda k: k >= 0 and self._block_II(n, k, c), 0))
        return _merge(blocks), tuple(flags)

    def base_and_ratio(self, zd):
        ea, er = self.spec.eps_a, self.spec.eps_r
        ls = ea / er
        m = mp(ls + ea, ls)
        return math.log(zd) / m, -m / ea


# -- bounded-variable means (Bernoulli embedding on the K lattice) ----------

def _rescale(mu, lims):
    a, b = lims
    return (mu - a) / (b - a)


def bounded_mean_decision(mean, n, spec, mode, rule, s, bounds=(0.0, 1.0), gamma=None,
                          zeta=None, delta_l=None):
    """Stop/continue for a bounded-variable mean.  Returns True for stop.

    mode: "abs", "mix", "rel-inverse" (gamma and count n given) or "rel"
    (noninverse; pass ``zeta`` and ``delta_l``).  rule: "hoeffding" or
    "massart".  The confidence share is delta/(2s) except for "rel".
    """
    a, b = bounds
    if not a - 1e-12 <= mean <= b + 1e-12:
        raise ValueError(f"mean {mean!r} outside [{a}, {b}]")
    if rule not in ("hoeffding", "massart"):
        raise ValueError("rule must be 'hoeffding' or 'massart'")
    M = mb if rule == "hoeffding" else mfun
    delta = spec.delta
    lz = math.log(delta / (2 * s))
    if mode == "abs":
        mu = _rescale(mean, bounds)
        eps = spec.eps / (b - a)
        if rule == "massart":
            return (abs(mu - 0.5) - 2 * eps / 3) ** 2 >= 0.25 + eps ** 2 * n / (2 * lz)
        w = 0.5 - abs(0.5 - mu)
        return mb(w, w + eps) <= lz / n
    if mode == "mix":
        ea, er = spec.eps_a, spec.eps_r
        sg = np.sign(mean)
        lo = min(mean - ea, mean / (1 + sg * er))
        hi = max(mean + ea, mean / (1 - sg * er))
        mu, L, U = _rescale(mean, bounds), _rescale(lo, bounds), _rescale(hi, bounds)
        return M(mu, L) <= lz / n and M(mu, U) <= lz / n
    if mode == "rel-inverse":
        eps = spec.eps
        if gamma is None:
            raise ValueError("rel-inverse needs gamma")
        c1 = M(gamma / n, gamma / (n * (1 + eps))) <= lz / n
        if n <= 1:
            return c1
        return c1 and M(gamma / (n - 1), gamma / (n * (1 - eps))) <= lz / (n - 1)
    if mode == "rel":
        eps = spec.eps
        lzl = math.log(zeta * delta_l)
        if rule == "massart":
            return mean >= 6 * (1 + eps) * (3 + eps) * lzl / (2 * (3 + eps) ** 2 * lzl - 9 * n * eps ** 2)
        return mean > 0 and mb(mean, mean / (1 + eps)) <= lzl / n
    raise ValueError(f"unknown mode {mode!r}")


class BoundedMean(_Design):
    """Bounded-mean plans; the stage boundary is the predicate restricted to
    sample sums on the integer lattice (exact for Bernoulli data)."""
    rules = ("hoeffding", "massart")

    def __init__(self, spec, rule, opts, N=None, mode="abs"):
        self.mode = mode
        if mode == "rel":
            self.infinite = True
        super().__init__(spec, rule, opts, N)

    def validate(self):
        k = self.spec.kind
        want = {"abs": "absolute", "rel": "relative", "mix": "mixed"}[self.mode]
        if k != want:
            raise ValueError(f"bounded-mean-{self.mode} needs a {want} error spec")
        if self.mode == "mix" and tuple(self.opts.get("bounds", (0.0, 1.0))) == (0.0, 1.0):
            if self.rule == "hoeffding":
                _check_mix(self.spec.eps_a, self.spec.eps_r, "chernoff")
            else:
                _check_mix(self.spec.eps_a, self.spec.eps_r, "massart")

    @property
    def bounds(self):
        return tuple(self.opts.get("bounds", (0.0, 1.0)))

    def limits(self, n, x):
        th = self.estimate(n, x)
        if self.mode == "abs":
            return _abs_limits(th, self.spec.eps)
        if self.mode == "rel":
            return _rel_limits(th, self.spec.eps)
        return _mix_limits(th, self.spec.eps_a, self.spec.eps_r)

    def stops(self, n, k, zd, stage_delta=None):
        mean = k / n
        if self.mode == "rel":
            return bounded_mean_decision(mean, n, self.spec, "rel", self.rule, 1,
                                         zeta=zd / self.spec.delta, delta_l=self.spec.delta)
        s = self._s
        return bounded_mean_decision(mean, n, self.spec, self.mode, self.rule, s, self.bounds)

    _s = 1

    def continue_set(self, n, zd, final=False):
        if self.mode == "rel":
            # same predicate as the noninverse binomial rule on the K lattice
            rule = "chernoff" if self.rule == "hoeffding" else "massart"
            return BinomialRel(self.spec, rule, self.opts).continue_set(n, zd, final)
        return super().continue_set(n, zd, final)

    def base_and_ratio(self, zd):
        if self.mode == "abs":
            eps = self.spec.eps
            base = math.log(1 / zd) / (2 * eps ** 2)
            r = 2 * eps ** 2 / math.log(1 / (1 - eps)) if self.rule == "hoeffding" \
                else (24 * eps - 16 * eps ** 2) / 9
            return base, r
        if self.mode == "rel":
            return BinomialRel(self.spec, "chernoff", self.opts).base_and_ratio(zd)
        ea, er = self.spec.eps_a, self.spec.eps_r
        a, b = self.bounds
        if (a, b) != (0.0, 1.0):
            tau = int(self.opts.get("tau", 3))
            return (b - a) ** 2 * math.log(1 / zd) / (2 * ea ** 2), self.opts.get("rho", 2.0) ** (1 - tau)
        rule = "chernoff" if self.rule == "hoeffding" else "massart"
        return BinomialMix(self.spec, rule, {}).base_and_ratio(zd)


# -- finite population ------------------------------------------------------

def finite_pop_limits(z, N, spec):
    """Lattice-adjusted interval endpoints for a finite population of size N."""
    z = np.asarray(z, dtype=float)
    if spec.kind == "absolute":
        lo, hi = z - spec.eps, z + spec.eps
    elif spec.kind == "relative":
        lo, hi = z / (1 + spec.eps), z / (1 - spec.eps)
    else:
        lo, hi = _mix_limits(z, spec.eps_a, spec.eps_r)
    # guard the ceil/floor against float noise on exact lattice values
    L = np.ceil(N * lo - 1e-9) / N - 1 / N
    U = np.floor(N * hi + 1e-9) / N + 1 / N
    return L, U


class FinitePop(_Design):
    law = "hyper"
    rules = ("cdf", "chen-bound", "normal-approx")

    def validate(self):
        if self.N is None or self.N < 1:
            raise ValueError("finite population needs N >= 1")
        if self.spec.kind == "fixed-width":
            raise ValueError("finite population supports absolute, relative or mixed error")

    def limits(self, n, x):
        return finite_pop_limits(self.estimate(n, x), self.N, self.spec)

    def stops(self, n, k, zd):
        N = self.N
        z = k / n
        L, U = (float(v) for v in finite_pop_limits(z, N, self.spec))
        if self.rule == "cdf":
            return dist.hyper_sf(k - 1, n, L, N) <= zd and dist.hyper_cdf(k, n, U, N) <= zd
        if self.rule == "chen-bound":
            return (dist.chen_hyper_bound(z, L, n, N) <= zd
                    and dist.chen_hyper_bound(z, U, n, N) <= zd)
        Z = dist.norm_upper_quantile(zd)
        lhs = Z ** 2 * (N / n - 1)
        sp = self.spec
        if sp.kind == "absolute":
            return lhs * z * (1 - z) <= (N - 1) * sp.eps ** 2
        if sp.kind == "relative":
            return lhs * (1 - z) <= (N - 1) * sp.eps ** 2 * z
        return lhs * z * (1 - z) <= (N - 1) * max(sp.eps_a ** 2, (sp.eps_r * z) ** 2)

    def _all_stop(self, n, zd):
        return all(self.stops(n, k, zd) for k in range(n + 1))

    def _any_stop(self, n, zd):
        return any(self.stops(n, k, zd) for k in range(n + 1))

    def anchors(self, zd):
        """(n_min, n_max): first size where some outcome stops, first size
        where every outcome stops."""
        N = self.N
        n_max = next((n for n in range(1, N + 1) if self._all_stop(n, zd)), N)
        n_min = next((n for n in range(1, n_max + 1) if self._any_stop(n, zd)), n_max)
        return n_min, n_max

    def base_and_ratio(self, zd):
        if self.rule != "normal-approx":
            n_min, n_max = self.anchors(zd)
            return n_max, n_min / n_max
        N = self.N
        Z = dist.norm_upper_quantile(zd)
        tau = int(self.opts.get("tau", 3))
        rho = self.opts.get("rho", 2.0)
        sp = self.spec
        if sp.kind == "absolute":
            base = N / (1 + 4 * (N - 1) * sp.eps ** 2 / Z ** 2)
        elif sp.kind == "relative":
            base = N
        else:
            ps = sp.eps_a / sp.eps_r
            base = N * ps * (1 - ps) / (ps * (1 - ps) + (N - 1) * sp.eps_a ** 2 / Z ** 2)
        return base, rho ** (1 - tau)


# -- bounded-width confidence intervals -------------------------------------

class BoundedWidth(_Design):
    rules = ("cp", "fishman", "explicit")

    def validate(self):
        eps = self.spec.eps
        if self.spec.kind != "fixed-width":
            raise ValueError("bounded-width intervals need a fixed-width spec")
        cap = 0.75 if self.rule == "explicit" else 0.5
        if not 0 < eps < cap:
            raise ValueError(f"{self.rule} variant needs 0 < eps < {cap}")
        self._cache = {}

    def ci(self, n, k, zd):
        key = (n, k, zd)
        if key in self._cache:
            return self._cache[key]
        p = k / n
        if self.rule == "cp":
            out = dist.clopper_pearson(k, n, zd)
        elif self.rule == "fishman":
            c = math.log(zd) / n
            f = lambda t: mb(p, t)
            if k == 0:
                L = 0.0
            elif k == n:
                L = zd ** (1 / n)
            else:
                L = bisect_monotone(f, 0.0, p, c, ROOT_TOL)
            if k == 0:
                U = 1 - zd ** (1 / n)
            elif k == n or f(1.0) > c:
                U = 1.0
            else:
                U = bisect_monotone(f, p, 1.0, c, ROOT_TOL)
            out = (L, U)
        else:
            lz = math.log(zd)
            root = math.sqrt(max(0.0, 1 - 9 * n * p * (1 - p) / (2 * lz)))
            den = 1 - 9 * n / (8 * lz)
            out = (max(0.0, p + 0.75 * (1 - 2 * p - root) / den),
                   min(1.0, p + 0.75 * (1 - 2 * p + root) / den))
        self._cache[key] = out
        return out

    def stops(self, n, k, zd):
        if self.rule == "explicit":
            lz = math.log(zd)
            p = k / n
            return 1 - 9 * n / (2 * lz) * p * (1 - p) <= self.spec.eps ** 2 * (4 / 3 - 3 * n / (2 * lz)) ** 2
        L, U = self.ci(n, k, zd)
        return U - L <= 2 * self.spec.eps

    def limits_zd(self, n, x, zd):
        L = np.empty(len(x))
        U = np.empty(len(x))
        for i, k in enumerate(np.asarray(x)):
            L[i], U[i] = self.ci(n, int(k), zd)
        return L, U

    def _sure_stop_size(self, zd):
        eps = self.spec.eps
        n = max(1, int(math.log(zd) / math.log(1 - 2 * eps)))
        while True:
            order = sorted(range(n + 1), key=lambda k: abs(k - n / 2))
            if all(self.stops(n, k, zd) for k in order):
                return n
            n += 1

    def base_and_ratio(self, zd):
        eps = self.spec.eps
        if self.rule == "cp":
            ns = self._sure_stop_size(zd)
            return ns, (math.log(zd) / math.log(1 - 2 * eps)) / ns
        if self.rule == "fishman":
            return math.log(1 / zd) / (2 * eps ** 2), 2 * eps ** 2 / math.log(1 / (1 - 2 * eps))
        return (1 / (2 * eps ** 2) - 8 / 9) * math.log(1 / zd), 4 * eps / (3 + 4 * eps)


# ---------------------------------------------------------------------------
# registry

FAMILIES = {
    "binomial-abs": lambda sp, r, o, N: BinomialAbs(sp, r, o, N),
    "binomial-mix": lambda sp, r, o, N: BinomialMix(sp, r, o, N),
    "binomial-rel-inverse": lambda sp, r, o, N: BinomialRelInverse(sp, r, o, N),
    "binomial-rel": lambda sp, r, o, N: BinomialRel(sp, r, o, N),
    "poisson-abs": lambda sp, r, o, N: PoissonAbs(sp, r, o, N),
    "poisson-rel": lambda sp, r, o, N: PoissonRel(sp, r, o, N),
    "poisson-mix": lambda sp, r, o, N: PoissonMix(sp, r, o, N),
    "bounded-mean-abs": lambda sp, r, o, N: BoundedMean(sp, r, o, N, "abs"),
    "bounded-mean-rel": lambda sp, r, o, N: BoundedMean(sp, r, o, N, "rel"),
    "bounded-mean-mix": lambda sp, r, o, N: BoundedMean(sp, r, o, N, "mix"),
    "finite-pop-abs": lambda sp, r, o, N: FinitePop(sp, r, o, N),
    "finite-pop-rel": lambda sp, r, o, N: FinitePop(sp, r, o, N),
    "finite-pop-mix": lambda sp, r, o, N: FinitePop(sp, r, o, N),
    "bw-ci-cp": lambda sp, r, o, N: BoundedWidth(sp, "cp", o, N),
    "bw-ci-fishman": lambda sp, r, o, N: BoundedWidth(sp, "fishman", o, N),
    "bw-ci-explicit": lambda sp, r, o, N: BoundedWidth(sp, "explicit", o, N),
}

_FP_KIND = {"finite-pop-abs": "absolute", "finite-pop-rel": "relative", "finite-pop-mix": "mixed"}


def _freeze(opts):
    out = []
    for k, v in sorted(opts.items()):
        if isinstance(v, list):
            v = tuple(v)
        out.append((k, v))
    return tuple(out)


@lru_cache(maxsize=256)
def _design(family, rule, spec, N, options):
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    if family in _FP_KIND and spec.kind != _FP_KIND[family]:
        raise ValueError(f"{family} needs a {_FP_KIND[family]} error spec")
    return FAMILIES[family](spec, rule, dict(options), N)


def get_design(plan):
    return _design(plan.family, plan.rule, plan.spec, plan.N, plan.options)


def _default_rule(family):
    if family.startswith("bw-ci-"):
        return family[len("bw-ci-"):]
    if family.startswith("bounded-mean"):
        return "hoeffding"
    if family.startswith("finite-pop"):
        return "cdf"
    return "chernoff"


# ---------------------------------------------------------------------------
# schedules and plans

def build_schedule(family, rule, spec, zeta, rho=2.0, N=None, eta=DEFAULT_ETA, **options):
    """Stage sizes (or sum thresholds) for a family at coverage parameter zeta."""
    rule = rule or _default_rule(family)
    if rho <= 1:
        raise ValueError("rho must exceed 1")
    if not 0 < zeta * spec.delta < 1:
        raise ValueError("need 0 < zeta * delta < 1")
    d = _design(family, rule, spec, N, _freeze(options))
    zd = zeta * spec.delta
    base, ratio = d.base_and_ratio(zd)
    tau = _tau(ratio, rho)
    single = tau == 0
    if family.startswith("bounded-mean") and not d.infinite:
        # share delta/(2s) is fixed, so the schedule depends on s itself
        s = max(tau, 1)
        zd = spec.delta / (2 * s)
        base, _ = d.base_and_ratio(zd)
    if d.infinite:
        tau = max(tau, 1)
        count = horizon(tau, zd, eta)
        vals = [_ceil(rho ** (l - tau) * base) for l in range(1, count + 1)]
    else:
        t = max(tau, 1)
        vals = [_ceil(rho ** (l - t) * base) for l in range(1, t + 1)]
    vals = [max(1, v) for v in vals]
    vals = sorted(set(vals))
    if d.law == "hyper":
        vals = sorted(set(min(v, N) for v in vals))
    if d.law == "inverse" and family == "binomial-rel-inverse":
        vals = [v for v in vals if v >= 1]
    deltas = stage_shares(spec.delta, tau, len(vals)) if d.infinite else (spec.delta,) * len(vals)
    kind = d.sched_kind
    return Schedule(kind, tuple(int(v) for v in vals), deltas, int(tau), float(rho), d.infinite, single)


def rebuild_boundaries(family, rule, spec, zeta, schedule, N=None, options=()):
    d = _design(family, rule, spec, N, options)
    out = []
    s = schedule.s
    if isinstance(d, BoundedMean):
        d._s = s
    for i, n in enumerate(schedule.values, start=1):
        zd = zeta * schedule.deltas[i - 1]
        final = (i == s) and not schedule.infinite
        b = d.stage_boundary(i, n, zd, final)
        if final and not b.empty:
            b = StageBoundary(b.stage, b.size, (), b.flags + ("final stop forced",))
        out.append(b)
    return tuple(out)


def build_plan(family, spec, zeta=None, rule=None, rho=2.0, N=None, sizes=None,
               eta=DEFAULT_ETA, tuned=False, **options):
    """Fully instantiated plan.  ``zeta=None`` uses the family's safe value.

    ``sizes`` overrides the computed schedule (stage shares follow the
    family's law).
    """
    rule = rule or _default_rule(family)
    opts = dict(options)
    if N is not None:
        N = int(N)
    frozen = _freeze(opts)
    d = _design(family, rule, spec, N, frozen)
    if sizes is not None and zeta is None and not d.infinite:
        # the safe value follows the stage count actually used
        k = len(tuple(sizes))
        zeta = d.zeta_safe(Schedule(d.sched_kind, tuple(range(1, k + 1)), (spec.delta,) * k, k, float(rho)))
    if zeta is None or family.startswith("bounded-mean") and not d.infinite:
        probe = build_schedule(family, rule, spec, 0.5, rho, N, eta, **opts)
        zeta = d.zeta_safe(probe)
        # the schedule at zeta may have more stages than the probe; lower zeta
        # until it is safe for its own schedule (a smaller value is still safe)
        for _ in range(64):
            sch = build_schedule(family, rule, spec, zeta, rho, N, eta, **opts)
            z2 = d.zeta_safe(sch)
            if zeta <= z2:
                break
            zeta = z2
    if sizes is None:
        sched = build_schedule(family, rule, spec, zeta, rho, N, eta, **opts)
    else:
        vals = tuple(int(v) for v in sizes)
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sizes must be strictly increasing")
        ref = build_schedule(family, rule, spec, zeta, rho, N, eta, **opts)
        deltas = stage_shares(spec.delta, ref.tau, len(vals)) if d.infinite else (spec.delta,) * len(vals)
        sched = Schedule(d.sched_kind, vals, deltas, ref.tau, float(rho), d.infinite, len(vals) == 1)
    bnds = rebuild_boundaries(family, rule, spec, zeta, sched, N, frozen)
    return Plan(family, rule, spec, float(zeta), sched, bnds, N, frozen, tuned)


def with_zeta(plan, zeta, **kw):
    """Rebuild a plan at another zeta (schedule included)."""
    opts = plan.opts
    return build_plan(plan.family, plan.spec, zeta, plan.rule, plan.schedule.rho, plan.N, **kw, **opts)


def evaluate(plan, stage, x):
    """Decision at a 1-based stage given the observed sum (or inverse count)."""
    if not 1 <= stage <= plan.s:
        raise IndexError(f"stage {stage} outside 1..{plan.s}")
    d = get_design(plan)
    b = plan.boundaries[stage - 1]
    n = b.size
    if isinstance(d, BoundedMean):
        k = float(x)
        d._s = plan.s
        stop = d.stops(n, k, plan.zd(stage))
        if stage == plan.s and not plan.schedule.infinite:
            stop = True
    else:
        lo, hi = d.support(n)
        if x < lo or (hi is not None and x > hi):
            raise ValueError(f"observation {x} outside support [{lo}, {hi}]")
        stop = not b.contains(x)
    if not stop:
        return Decision(False, stage, n)
    th = float(d.estimate(n, x))
    if isinstance(d, BoundedWidth):
        L, U = d.ci(n, int(x), plan.zd(stage))
    else:
        L, U = (float(v) for v in d.limits(n, x))
    count = int(x) if d.law == "inverse" else n
    return Decision(True, stage, count, th, L, U)


def stage_intervals(plan, stage, xs):
    """Vectorized (estimate, L, U) for stage outcomes ``xs`` (sums or counts)."""
    d = get_design(plan)
    b = plan.boundaries[stage - 1]
    xs = np.asarray(xs)
    th = np.asarray(d.estimate(b.size, xs), dtype=float)
    if isinstance(d, BoundedWidth):
        L, U = d.limits_zd(b.size, xs, plan.zd(stage))
    else:
        L, U = d.limits(b.size, xs)
    return th, np.asarray(L, dtype=float) * np.ones_like(th), np.asarray(U, dtype=float) * np.ones_like(th)


def law_of(plan):
    return get_design(plan).law


# ---------------------------------------------------------------------------
# per-family boundary entry points

def _as_spec(kind, delta=0.5, **kw):
    return ErrorSpec(kind, delta, **kw)


def binom_abs_boundaries(n, eps, zd, rule="chernoff"):
    d = BinomialAbs(_as_spec("absolute", eps=eps), rule, {})
    return d.stage_boundary(1, n, zd)


def binom_mix_boundaries(n, eps_a, eps_r, zd, rule="chernoff"):
    d = BinomialMix(_as_spec("mixed", eps_a=eps_a, eps_r=eps_r), rule, {})
    return d.stage_boundary(1, n, zd)


def binom_rel_inverse_boundaries(gamma, eps, zd, rule="chernoff"):
    d = BinomialRelInverse(_as_spec("relative", eps=eps), rule, {})
    return d.stage_boundary(1, gamma, zd)


def binom_rel_noninverse_boundaries(n, delta_l, eps, zeta, rule="chernoff"):
    d = BinomialRel(_as_spec("relative", eps=eps), rule, {})
    return d.stage_boundary(1, n, zeta * delta_l)


def poisson_boundaries(n, delta_l, spec, zeta, mode, rule="chernoff"):
    cls = {"abs": PoissonAbs, "rel": PoissonRel, "mix": PoissonMix}[mode]
    return cls(spec, rule, {}).stage_boundary(1, n, zeta * delta_l)


def finite_pop_boundaries(n, N, spec, zd, rule="cdf"):
    d = FinitePop(spec, rule, {}, N)
    return d.stage_boundary(1, n, zd)


def bw_ci_boundaries(n, eps, zd, variant="cp"):
    d = BoundedWidth(ErrorSpec("fixed-width", 0.5, eps=eps), variant, {})
    return d.stage_boundary(1, n, zd)


def truncated_inverse_design(delta, statement="I", eps=None, eps_a=None, eps_r=None):
    """Smallest (gamma, m) meeting the truncated inverse sampling conditions.

    Statement "I": relative margin eps, m unused (None).  "II" (bounded
    variables) and "III" (Bernoulli): mixed margins with p* = eps_a/eps_r.
    """
    if statement == "I":
        if eps is None or not 0 < eps < 1:
            raise ValueError("statement I needs 0 < eps < 1")
        g = (1 + eps) * math.log(2 / delta) / ((1 + eps) * math.log(1 + eps) - eps)
        return math.floor(g) + 1, None
    if eps_a is None or eps_r is None or not 0 < eps_a < eps_r < 1:
        raise ValueError("statements II/III need 0 < eps_a < eps_r < 1")
    ps = eps_a / eps_r
    if ps + eps_a > 0.5:
        raise ValueError(f"need p* + eps_a <= 1/2, got {ps + eps_a:.6g}")
    ld = math.log(delta / 2)
    g0 = ld / mi(ps + eps_a, ps)
    m = math.floor(ld / mb(ps + eps_a, ps)) + 1
    gamma = max(2, math.floor(g0) + 1)
    if statement == "II":
        gamma = max(gamma, math.floor((1 - eps_r) / eps_r) + 1)
        while True:
            z = gamma * (ps - eps_a) / (gamma - 1 + eps_r)
            v = mi(z, ps) if z > 0 else -math.inf
            if v == -math.inf or gamma > ld / v:
                break
            gamma += 1
    elif statement != "III":
        raise ValueError("statement must be 'I', 'II' or 'III'")
    return gamma, m
