"""Special functions: log-factorials, exact discrete tails, rate functions.

Point masses use Loader's saddle-point decomposition (``stirlerr`` plus the
deviance ``bd0``), which keeps absolute error near machine precision well
past n = 10**6.  Tails are summed outward from the requested point on the
side away from the mode, so only terms that matter are touched.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special, stats

NEG_INF = -math.inf
LN_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LN_2PI = math.log(2.0 * math.pi)

__all__ = [
    "NEG_INF", "LogFactorialTable", "log_factorial", "stirling_bracket",
    "binom_logpmf", "binom_pmf", "binom_cdf", "binom_sf",
    "poisson_logpmf", "poisson_pmf", "poisson_cdf", "poisson_sf",
    "hyper_logpmf", "hyper_pmf", "hyper_cdf", "hyper_sf", "population_count",
    "invbinom_logpmf",
    "mb", "mi", "mp", "mfun",
    "chen_hyper_bound", "clopper_pearson", "gamma_rel_sample_size",
    "norm_upper_quantile",
]


# ---------------------------------------------------------------------------
# log factorials

def stirling_bracket(n):
    """Lower and upper Stirling-series bounds on ln(n!) for n >= 1.

    The float result is widened outward by the rounding error of the
    evaluation, so the returned pair brackets the true value.
    """
    n = np.asarray(n, dtype=float)
    base = 0.5 * np.log(2 * np.pi * n) + n * np.log(n) - n
    lo = base + 1.0 / (12 * n) - 1.0 / (360 * n ** 3)
    hi = lo + 1.0 / (1260 * n ** 5)
    pad = 8 * np.finfo(float).eps * (n * np.log(n) + n + 1)
    return lo - pad, hi + pad


class LogFactorialTable:
    """Table of ln(n!) for 0 <= n <= cap, read-only after construction."""

    def __init__(self, cap=2 ** 20):
        self.cap = int(cap)
        # gammaln is correctly rounded per entry; a running sum of logs
        # would accumulate ~cap ulps of drift
        entries = special.gammaln(np.arange(self.cap + 1, dtype=float) + 1.0)
        entries[:2] = 0.0
        entries.setflags(write=False)
        self.entries = entries

    def __call__(self, n):
        n = np.asarray(n)
        if np.any(n < 0):
            raise ValueError("log_factorial needs n >= 0")
        inside = n <= self.cap
        if np.all(inside):
            out = self.entries[n.astype(np.int64)]
        else:
            lo, hi = stirling_bracket(np.maximum(n, 1))
            out = np.where(inside, self.entries[np.minimum(n, self.cap).astype(np.int64)],
                           0.5 * (lo + hi))
        return float(out) if out.ndim == 0 else out


_LF_TABLE = None


def log_factorial(n):
    """ln(n!) from the shared table, Stirling midpoint above the cap."""
    global _LF_TABLE
    if _LF_TABLE is None:
        _LF_TABLE = LogFactorialTable()
    return _LF_TABLE(n)


# ---------------------------------------------------------------------------
# saddle-point pieces

_S0, _S1, _S2, _S3, _S4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188


def _stirlerr(n):
    """ln(n!) - ln(sqrt(2 pi n) (n/e)^n), vectorized, n > 0."""
    n = np.asarray(n, dtype=float)
    out = np.empty_like(n)
    small = n <= 15
    if np.any(small):
        ns = n[small]
        out[small] = special.gammaln(ns + 1) - (ns + 0.5) * np.log(ns) + ns - LN_SQRT_2PI
    big = ~small
    if np.any(big):
        nb = n[big]
        nn = nb * nb
        r = np.where(nb > 500, (_S0 - _S1 / nn) / nb,
            np.where(nb > 80, (_S0 - (_S1 - _S2 / nn) / nn) / nb,
            np.where(nb > 35, (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / nb,
                     (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / nb)))
        out[big] = r
    return out


def _bd0(x, m):
    """Deviance x ln(x/m) + m - x, computed without cancellation."""
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    x, m = np.broadcast_arrays(x, m)
    out = np.empty(x.shape)
    near = np.abs(x - m) < 0.1 * (x + m)
    if np.any(near):
        xs, ms = x[near], m[near]
        v = (xs - ms) / (xs + ms)
        s = (xs - ms) * v
        ej = 2 * xs * v
        v2 = v * v
        for j in range(1, 40):
            ej = ej * v2
            s1 = s + ej / (2 * j + 1)
            if np.all(s1 == s):
                break
            s = s1
        out[near] = s
    far = ~near
    if np.any(far):
        xf, mf = x[far], m[far]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(xf > 0, xf * np.log(xf / mf), 0.0)
        out[far] = t + mf - xf
    return out


def _binom_raw_log(k, n, p):
    """Log binomial mass with float k, n (interior 0 < k < n assumed)."""
    q = 1.0 - p
    lc = _stirlerr(n) - _stirlerr(k) - _stirlerr(n - k) - _bd0(k, n * p) - _bd0(n - k, n * q)
    lf = LN_2PI + np.log(k) + np.log1p(-k / n)
    return lc - 0.5 * lf


def binom_logpmf(k, n, p):
    """ln P{Bin(n, p) = k}; -inf outside the support."""
    k = np.asarray(k, dtype=float)
    n = float(n)
    p = float(p)
    out = np.full(k.shape, NEG_INF)
    ok = (k >= 0) & (k <= n)
    if p <= 0.0 or p >= 1.0:
        hit = k == (0.0 if p <= 0.0 else n)
        out[hit & ok] = 0.0
        return out if out.ndim else float(out)
    z0 = ok & (k == 0)
    zn = ok & (k == n)
    out[z0] = n * math.log1p(-p)
    out[zn] = n * math.log(p)
    mid = ok & ~z0 & ~zn
    if np.any(mid):
        out[mid] = _binom_raw_log(k[mid], n, p)
    return out if out.ndim else float(out)


def binom_pmf(k, n, p):
    return np.exp(binom_logpmf(k, n, p))


def poisson_logpmf(k, lam):
    k = np.asarray(k, dtype=float)
    lam = float(lam)
    out = np.full(k.shape, NEG_INF)
    ok = k >= 0
    if lam <= 0.0:
        out[ok & (k == 0)] = 0.0
        return out if out.ndim else float(out)
    z0 = ok & (k == 0)
    out[z0] = -lam
    pos = ok & (k > 0)
    if np.any(pos):
        kk = k[pos]
        out[pos] = -_stirlerr(kk) - _bd0(kk, lam) - 0.5 * (LN_2PI + np.log(kk))
    return out if out.ndim else float(out)


def poisson_pmf(k, lam):
    return np.exp(poisson_logpmf(k, lam))


def _binom_raw_log_any(k, n, p):
    # k in [0, n] including endpoints, 0 < p < 1
    k = np.asarray(k, dtype=float)
    out = np.empty(k.shape)
    z0 = k == 0
    zn = k == n
    out[z0] = n * math.log1p(-p)
    out[zn & ~z0] = n * math.log(p)
    mid = ~z0 & ~zn
    if np.any(mid):
        out[mid] = _binom_raw_log(k[mid], float(n), p)
    return out


def hyper_logpmf(k, n, M, N):
    """ln P{k successes in n draws without replacement, M successes among N}."""
    k = np.asarray(k, dtype=float)
    out = np.full(k.shape, NEG_INF)
    lo, hi = max(0, n - (N - M)), min(n, M)
    ok = (k >= lo) & (k <= hi)
    if not np.any(ok):
        return out if out.ndim else float(out)
    if n == 0 or n == N:
        out[ok] = 0.0
        return out if out.ndim else float(out)
    p = n / N
    kk = k[ok]
    out[ok] = (_binom_raw_log_any(kk, M, p) + _binom_raw_log_any(n - kk, N - M, p)
               - _binom_raw_log_any(np.array([float(n)]), N, p)[0])
    return out if out.ndim else float(out)


def hyper_pmf(k, n, M, N):
    return np.exp(hyper_logpmf(k, n, M, N))


def invbinom_logpmf(m, gamma, p):
    """ln P{the gamma-th success arrives at trial m} for Bernoulli(p) trials."""
    m = np.asarray(m, dtype=float)
    p = float(p)
    out = np.full(m.shape, NEG_INF)
    ok = m >= gamma
    if p >= 1.0:
        out[ok & (m == gamma)] = 0.0
    elif p > 0.0:
        out[ok & (m == gamma)] = gamma * math.log(p)
        gt = ok & (m > gamma)
        if np.any(gt):
            mm = m[gt]
            out[gt] = np.log(gamma / mm) + _binom_raw_log(np.full_like(mm, gamma), mm, p)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# tails

# above this many trials (or this Poisson mean) the direct sums get long;
# the regularized incomplete beta/gamma routines take over
BIG = 10 ** 6

def _outward_sum(logpmf, start, stop, step):
    """Sum exp(logpmf(i)) for i = start, start+step, ... up to stop (inclusive).

    Terms are assumed to decay in the direction of ``step`` so summation
    stops once a chunk adds nothing at double precision.  ``stop`` may be
    None for an unbounded range.
    """
    total = 0.0
    i = start
    chunk = 64
    while True:
        if stop is not None and (i - stop) * step > 0:
            break
        j = i + step * (chunk - 1)
        if stop is not None and (j - stop) * step > 0:
            j = stop
        idx = np.arange(i, j + step, step)
        terms = np.exp(logpmf(idx))
        part = float(np.sum(terms))
        total += part
        if terms.size and terms[-1] <= 1e-18 * max(total, 1e-300) and terms[-1] <= terms[0]:
            break
        if part == 0.0 and terms.size and stop is None:
            break
        i = j + step
        chunk = min(chunk * 2, 1 << 16)
    return total


def binom_cdf(k, n, theta):
    """S_B(k, n, theta) = P{Bin(n, theta) <= k} with the out-of-range branches."""
    if theta < 0:
        return 1.0
    if theta > 1:
        return 0.0
    k = math.floor(k)
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if n > BIG:
        return float(special.bdtr(k, n, theta))
    mode = math.floor((n + 1) * theta)
    f = lambda i: binom_logpmf(i, n, theta)
    if k < mode:
        return min(1.0, _outward_sum(f, k, 0, -1))
    return max(0.0, 1.0 - _outward_sum(f, k + 1, n, 1))


def binom_sf(k, n, theta):
    """1 - S_B(k, n, theta), i.e. P{Bin(n, theta) > k}, summed directly."""
    if theta < 0:
        return 0.0
    if theta > 1:
        return 1.0
    k = math.floor(k)
    if k < 0:
        return 1.0
    if k >= n:
        return 0.0
    if n > BIG:
        return float(special.bdtrc(k, n, theta))
    mode = math.floor((n + 1) * theta)
    f = lambda i: binom_logpmf(i, n, theta)
    if k + 1 > mode:
        return min(1.0, _outward_sum(f, k + 1, n, 1))
    return max(0.0, 1.0 - _outward_sum(f, k, 0, -1))


def poisson_cdf(k, lam):
    """S_P(k, lam); zero for lam < 0."""
    if lam < 0:
        return 0.0
    k = math.floor(k)
    if k < 0:
        return 0.0
    if lam == 0:
        return 1.0
    if lam > BIG:
        return float(special.pdtr(k, lam))
    f = lambda i: poisson_logpmf(i, lam)
    if k < math.floor(lam):
        return min(1.0, _outward_sum(f, k, 0, -1))
    return max(0.0, 1.0 - _outward_sum(f, k + 1, None, 1))


def poisson_sf(k, lam):
    """1 - S_P(k, lam)."""
    if lam < 0:
        return 1.0
    k = math.floor(k)
    if k < 0:
        return 1.0
    if lam == 0:
        return 0.0
    if lam > BIG:
        return float(special.pdtrc(k, lam))
    f = lambda i: poisson_logpmf(i, lam)
    if k + 1 > math.floor(lam):
        return min(1.0, _outward_sum(f, k + 1, None, 1))
    return max(0.0, 1.0 - _outward_sum(f, k, 0, -1))


def population_count(p, N):
    """Integer pN for p on the 1/N lattice; rejects off-lattice p."""
    m = round(p * N)
    if abs(p * N - m) > 1e-9 * max(1.0, N):
        raise ValueError(f"p={p!r} is not on the 1/{N} lattice (pN={p * N!r})")
    return int(m)


def hyper_cdf(k, n, p, N):
    """S_N(k, n, p): hypergeometric cdf with pN successes among N."""
    if p < 0:
        return 1.0
    if p > 1:
        return 0.0
    M = population_count(p, N)
    if not 0 <= n <= N:
        raise ValueError("need 0 <= n <= N")
    k = math.floor(k)
    lo, hi = max(0, n - (N - M)), min(n, M)
    if k < lo:
        return 0.0
    if k >= hi:
        return 1.0
    mode = math.floor((n + 1) * (M + 1) / (N + 2))
    f = lambda i: hyper_logpmf(i, n, M, N)
    if k < mode:
        return min(1.0, _outward_sum(f, k, lo, -1))
    return max(0.0, 1.0 - _outward_sum(f, k + 1, hi, 1))


def hyper_sf(k, n, p, N):
    """1 - S_N(k, n, p)."""
    if p < 0:
        return 0.0
    if p > 1:
        return 1.0
    M = population_count(p, N)
    k = math.floor(k)
    lo, hi = max(0, n - (N - M)), min(n, M)
    if k < lo:
        return 1.0
    if k >= hi:
        return 0.0
    mode = math.floor((n + 1) * (M + 1) / (N + 2))
    f = lambda i: hyper_logpmf(i, n, M, N)
    if k + 1 > mode:
        return min(1.0, _outward_sum(f, k + 1, hi, 1))
    return max(0.0, 1.0 - _outward_sum(f, k, lo, -1))


# ---------------------------------------------------------------------------
# rate functions; all vectorized, -inf is IEEE -inf

def _ret(out):
    return float(out) if np.ndim(out) == 0 else out


def mb(z, theta):
    """Binomial Chernoff exponent z ln(theta/z) + (1-z) ln((1-theta)/(1-z))."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(theta, dtype=float)
    z, t = np.broadcast_arrays(z, t)
    out = np.full(z.shape, NEG_INF)
    ok = (t > 0) & (t < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = ok & (z > 0) & (z < 1)
        zi, ti = z[inner], t[inner]
        out[inner] = zi * (np.log(ti) - np.log(zi)) + (1 - zi) * (np.log1p(-ti) - np.log1p(-zi))
        z0 = ok & (z == 0)
        out[z0] = np.log1p(-t[z0])
        z1 = ok & (z == 1)
        out[z1] = np.log(t[z1])
    return _ret(out)


def mi(z, theta):
    """Inverse-sampling exponent: mb(z, theta) / z with its own branches."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(theta, dtype=float)
    z, t = np.broadcast_arrays(z, t)
    out = np.full(z.shape, NEG_INF)
    ok = (t > 0) & (t < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = ok & (z > 0) & (z < 1)
        zi, ti = z[inner], t[inner]
        out[inner] = (np.log(ti) - np.log(zi)) + (1 / zi - 1) * (np.log1p(-ti) - np.log1p(-zi))
        z1 = ok & (z == 1)
        out[z1] = np.log(t[z1])
    return _ret(out)


def mp(z, theta):
    """Poisson exponent z - theta + z ln(theta/z)."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(theta, dtype=float)
    z, t = np.broadcast_arrays(z, t)
    out = np.full(z.shape, NEG_INF)
    ok = t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = ok & (z > 0)
        zp, tp = z[pos], t[pos]
        out[pos] = zp - tp + zp * (np.log(tp) - np.log(zp))
        z0 = ok & (z == 0)
        out[z0] = -t[z0]
    return _ret(out)


def mfun(z, theta):
    """Massart exponent 9(z-theta)^2 / (2(z+2theta)(z+2theta-3))."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(theta, dtype=float)
    z, t = np.broadcast_arrays(z, t)
    out = np.full(z.shape, NEG_INF)
    ok = (t > 0) & (t < 1)
    zz, tt = z[ok], t[ok]
    s = zz + 2 * tt
    with np.errstate(divide="ignore", invalid="ignore"):
        out[ok] = 9 * (zz - tt) ** 2 / (2 * s * (s - 3))
    return _ret(out)


# ---------------------------------------------------------------------------

def _log_comb(a, b):
    if b < 0 or b > a or a < 0:
        return NEG_INF
    return log_factorial(a) - log_factorial(b) - log_factorial(a - b)


def chen_hyper_bound(z, p, n, N):
    """Chen's bound on the hypergeometric tail beyond the sample fraction z.

    Dominates P{mean >= z} when z >= p and P{mean <= z} when z <= p.
    Returns 0 when p lies outside [0, 1] (the tail is empty there) and the
    trivial 1 when the normalizing binomials vanish.
    """
    n, N = int(n), int(N)
    k = round(z * n)
    if abs(z * n - k) > 1e-9 * max(1, n) or not 0 <= k <= n:
        raise ValueError(f"z={z!r} is not a sample fraction k/{n}")
    if p < -1e-12 or p > 1 + 1e-12:
        return 0.0
    M = population_count(min(max(p, 0.0), 1.0), N)
    if k == n:
        num = _log_comb(M, n) - _log_comb(N, n)
        return math.exp(num) if num > NEG_INF else 0.0
    j = ((N + 1) * k) // n
    den = _log_comb(j, k) + _log_comb(N - j, n - k)
    if den == NEG_INF:
        return 1.0
    num = _log_comb(M, k) + _log_comb(N - M, n - k)
    if num == NEG_INF:
        return 0.0
    return min(1.0, math.exp(num - den))


def _bisect_bracket(f, lo, hi, want_low, tol=1e-10):
    """Bisection of a monotone boolean f (f(lo) != f(hi)); returns the side
    where f holds."""
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) == flo:
            lo = mid
        else:
            hi = mid
    return lo if want_low else hi


def clopper_pearson(k, n, alpha):
    """Exact binomial limits with one-sided level alpha on each side.

    L is the largest p <= k/n with P{K >= k | p} <= alpha and U the smallest
    p >= k/n with P{K <= k | p} <= alpha.  Beta quantiles give a starting
    point; the returned limit is then pinned to within 1e-10 by bisection on
    the exact tail, on the conservative side.
    """
    k, n = int(k), int(n)
    phat = k / n if n > 0 else 0.0
    if k == 0:
        L = 0.0
    else:
        ok = lambda t: binom_sf(k - 1, n, t) <= alpha
        if ok(phat):
            L = phat
        else:
            guess = float(stats.beta.ppf(alpha, k, n - k + 1)) if alpha < 1 else phat
            lo, hi = max(0.0, guess - 1e-7), min(phat, guess + 1e-7)
            if not ok(lo):
                lo = 0.0
            if ok(hi):
                hi = phat
            L = _bisect_bracket(ok, lo, hi, want_low=True)
    if k == n:
        U = 1.0
    else:
        ok = lambda t: binom_cdf(k, n, t) <= alpha
        if ok(phat):
            U = phat
        else:
            guess = float(stats.beta.ppf(1 - alpha, k + 1, n - k)) if alpha < 1 else phat
            lo, hi = max(phat, guess - 1e-7), min(1.0, guess + 1e-7)
            if ok(lo):
                lo = phat
            if not ok(hi):
                hi = 1.0
            U = _bisect_bracket(lambda t: not ok(t), lo, hi, want_low=False)
    return L, U


def _gamma_tail(n, k, eps):
    a = n * k
    return float(special.gammaincc(a, (1 + eps) * a) + special.gammainc(a, (1 - eps) * a))


def gamma_rel_sample_size(k, eps, delta):
    """Smallest n with P{|mean - scale| >= eps * scale} <= delta for Gamma(k)."""
    if _gamma_tail(1, k, eps) <= delta:
        return 1
    hi = 2
    while _gamma_tail(hi, k, eps) > delta:
        hi *= 2
    lo = hi // 2  # fails at lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _gamma_tail(mid, k, eps) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def norm_upper_quantile(alpha):
    """Z with P{N(0,1) > Z} = alpha."""
    return float(-special.ndtri(alpha))
