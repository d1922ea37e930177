"""Coverage tuning: backward adaptive maximum checking and bisection on zeta."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .coverage import TooWide, complement_bounds_on_interval, exact_complement
from .distributions import mp
from .rules import build_plan, get_design, law_of
from .numerics import bisect_monotone

__all__ = [
    "AmcaResult", "TuneResult", "TuningError", "amca_check", "lattice_sweep",
    "initial_zeta", "bisection_tune", "default_range", "lambda_bar_certificate",
]

ZETA_CAP_SLACK = 1e-12


class TuningError(RuntimeError):
    pass


@dataclass
class AmcaResult:
    passed: bool
    certificate: list            # (a, b, upper bound) per certified interval
    failed_at: tuple | None = None
    evaluations: int = 0

    def __bool__(self):
        return self.passed

    @property
    def max_upper(self):
        return max((u for _, _, u in self.certificate), default=0.0)


@dataclass
class TuneResult:
    zeta: float
    plan: object
    certificate: list
    iterations: int
    history: list                # (zeta, passed) in evaluation order
    zeta_safe: float
    zeta0: float
    capped: bool = False

    @property
    def first_fail(self):
        return next((z for z, ok in self.history if not ok), None)


def default_range(plan):
    """Parameter range checked when none is given."""
    fam = plan.family
    opts = plan.opts
    if fam.startswith("poisson"):
        return opts.get("lam_floor", 1e-9), opts.get("lambda_bar", 10.0)
    if fam.startswith("finite-pop"):
        return 0.0, 1.0
    if fam in ("binomial-rel", "binomial-rel-inverse", "bounded-mean-rel"):
        return opts.get("p_floor", 0.01), 1.0 - 1e-9
    return 1e-9, 1.0 - 1e-9


def _bound(plan, a, b, eta):
    try:
        return complement_bounds_on_interval(plan, a, b, eta).upper
    except TooWide:
        return None


def lattice_sweep(plan, delta, lo=0.0, hi=1.0):
    """Finite population: exact complement at every m/N in [lo, hi]."""
    N = plan.N
    cert = []
    m0, m1 = math.ceil(lo * N - 1e-9), math.floor(hi * N + 1e-9)
    worst = None
    for m in range(m0, m1 + 1):
        p = m / N
        c = exact_complement(plan, p).upper
        cert.append((p, p, c))
        if c >= delta and worst is None:
            worst = (p, c)
    return AmcaResult(worst is None, cert, worst, m1 - m0 + 1)


def amca_check(plan, delta, lo=None, hi=None, eta_step=1e-15, d0=None, eta=1e-10, oracle=None):
    """Backward sweep certifying sup complement < delta on [lo, hi].

    Starting at b = hi, the interval [b - d, b] is bounded; on success the
    sweep moves to a = b - d and doubles d, on failure d is halved.  The
    check fails once d drops below ``eta_step``.  Finite-population plans
    step on the 1/N lattice with one lattice unit as the smallest step.
    ``oracle(a, b)`` replaces the interval bound (None means too wide).
    """
    if lo is None or hi is None:
        dlo, dhi = default_range(plan)
        lo = dlo if lo is None else lo
        hi = dhi if hi is None else hi
    if lo > hi:
        raise ValueError("need lo <= hi")
    if oracle is None:
        oracle = lambda a, b: _bound(plan, a, b, eta)
    cert = []
    evals = 0
    if law_of(plan) == "hyper":
        N = plan.N
        b = math.floor(hi * N + 1e-9)
        m_lo = math.ceil(lo * N - 1e-9)
        d = max(1, int(d0 * N) if d0 else (b - m_lo) // 8)
        # the endpoint itself first
        while b >= m_lo:
            a = max(m_lo, b - d) if b > m_lo else b
            u = oracle(a / N, b / N)
            evals += 1
            if u is not None and u < delta:
                cert.append((a / N, b / N, u))
                if a == m_lo:
                    return AmcaResult(True, cert, None, evals)
                b = a
                d *= 2
            else:
                if d == 1 or a == b:
                    return AmcaResult(False, cert, (a / N, b / N), evals)
                d = max(1, d // 2)
        return AmcaResult(True, cert, None, evals)
    d = d0 if d0 is not None else (hi - lo) / 8
    if d <= 0:
        d = eta_step * 2
    b = hi
    while True:
        a = max(lo, b - d)
        u = oracle(a, b)
        evals += 1
        if u is not None and u < delta:
            cert.append((a, b, u))
            if a <= lo:
                return AmcaResult(True, cert, None, evals)
            b = a
            d *= 2
        else:
            d /= 2
            if d < eta_step or a == b:
                return AmcaResult(False, cert, (a, b), evals)


def initial_zeta(plan_or_design, schedule=None):
    """(zeta_safe, zeta_0): the family's guaranteed value and the bracketing start."""
    if schedule is None:
        plan = plan_or_design
        d, schedule, delta = get_design(plan), plan.schedule, plan.spec.delta
    else:
        d, delta = plan_or_design, plan_or_design.spec.delta
    safe = d.zeta_safe(schedule)
    cap = (1 - ZETA_CAP_SLACK) / delta
    return safe, min(max(safe, 0.5), cap)


def bisection_tune(family, spec, rule=None, lo=None, hi=None, rtol=1e-3, rho=2.0, N=None,
                   eta=1e-10, eta_step=1e-15, max_iter=80, **options):
    """Largest zeta (within rtol) whose plan passes the feasibility check."""
    delta = spec.delta
    cap = (1 - ZETA_CAP_SLACK) / delta
    base = build_plan(family, spec, None, rule, rho, N, **options)
    safe, z0 = initial_zeta(base)
    if lo is None or hi is None:
        dlo, dhi = default_range(base)
        lo = dlo if lo is None else lo
        hi = dhi if hi is None else hi
    history = []
    cache = {}

    def check(z):
        if z in cache:
            return cache[z][0]
        plan = build_plan(family, spec, z, rule, rho, N, tuned=True, **options)
        if law_of(plan) == "hyper":
            res = lattice_sweep(plan, delta, lo, hi)
        else:
            res = amca_check(plan, delta, lo, hi, eta_step, eta=eta)
        cache[z] = (res.passed, plan, res)
        history.append((z, res.passed))
        return res.passed

    it = 0
    if check(z0):
        z_lo, z_hi = z0, None
        z = z0
        while z < cap:
            z = min(2 * z, cap)
            it += 1
            if check(z):
                z_lo = z
            else:
                z_hi = z
                break
        if z_hi is None:
            return _finish(family, spec, rule, rho, N, z_lo, history, cache, safe, z0, it, True,
                           delta, lo, hi, eta, eta_step, options)
    else:
        z_hi = z0
        z = z0
        while True:
            z = max(z / 2, safe)
            it += 1
            if check(z):
                z_lo = z
                break
            z_hi = z
            if z <= safe:
                raise TuningError(
                    f"feasibility check fails even at the safe value zeta={safe!r}; "
                    f"history={history}")
    while z_hi / z_lo - 1 > rtol and it < max_iter:
        mid = 0.5 * (z_lo + z_hi)
        it += 1
        if check(mid):
            z_lo = mid
        else:
            z_hi = mid
    return _finish(family, spec, rule, rho, N, z_lo, history, cache, safe, z0, it, False,
                   delta, lo, hi, eta, eta_step, options)


def _finish(family, spec, rule, rho, N, z, history, cache, safe, z0, it, capped,
            delta, lo, hi, eta, eta_step, options):
    passes = [q for q, ok in history if ok]
    fails = [q for q, ok in history if not ok]
    if passes and fails and max(passes) > min(fails):
        raise TuningError(f"feasibility is not monotone in zeta: history={history}")
    # fresh rebuild and re-check
    plan = build_plan(family, spec, z, rule, rho, N, tuned=True, **options)
    if law_of(plan) == "hyper":
        res = lattice_sweep(plan, delta, lo, hi)
    else:
        res = amca_check(plan, delta, lo, hi, eta_step, eta=eta)
    if not res.passed:
        raise TuningError(f"re-verification failed at zeta={z!r}")
    return TuneResult(z, plan, res.certificate, it, history, safe, z0, capped)


def lambda_bar_certificate(plan):
    """lam_bar with sum_l exp(n_l M_P(lam (1 + eps), lam)) = delta / 2.

    Beyond lam_bar the upper-tail miss probability of a relative-error
    Poisson plan stays below delta/2 without computation.
    """
    sp = plan.spec
    eps = sp.eps if sp.eps is not None else sp.eps_r
    sizes = [b.size for b in plan.boundaries]
    f = lambda lam: math.log(sum(math.exp(n * mp(lam * (1 + eps), lam)) for n in sizes))
    target = math.log(sp.delta / 2)
    hi = 1.0
    while f(hi) > target:
        hi *= 2
    return bisect_monotone(f, 1e-12, hi, target, 1e-12 * hi)
