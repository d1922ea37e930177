"""Numerical kernels: monotone bisection, chord/tangent bounds for sums and
integrals, and the rectangle/triangle split of a two-variable probability."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

__all__ = [
    "BoundPair", "NoBracketError", "bisect_monotone", "root_or_clamp",
    "split_sum_bounds", "split_integral_bounds",
    "DecomposeTerms", "rect_prob_decompose", "triangle_prob_bounds", "TriangleRefiner",
]


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"lower {self.lower!r} exceeds upper {self.upper!r}")

    @property
    def width(self):
        return self.upper - self.lower

    def __contains__(self, x):
        return self.lower <= x <= self.upper


class NoBracketError(ValueError):
    pass


def _sign(x):
    return (x > 0) - (x < 0)


def bisect_monotone(f, lo, hi, target, tol=1e-12):
    """Root of f(x) = target for f monotone on [lo, hi], either direction.

    Endpoint values may be -inf.  Uses two endpoint evaluations plus
    ceil(log2((hi - lo) / tol)) interior ones and returns the midpoint of the
    final bracket.
    """
    glo = f(lo) - target
    ghi = f(hi) - target
    if glo == 0:
        return lo
    if ghi == 0:
        return hi
    if _sign(glo) == _sign(ghi):
        raise NoBracketError(
            f"no bracket on [{lo!r}, {hi!r}]: f(lo)={glo + target!r}, "
            f"f(hi)={ghi + target!r}, target={target!r}")
    slo = _sign(glo)
    n = max(0, math.ceil(math.log2((hi - lo) / tol)))
    for _ in range(n):
        mid = 0.5 * (lo + hi)
        g = f(mid) - target
        if g == 0:
            return mid
        if _sign(g) == slo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def root_or_clamp(f, lo, hi, target, tol=1e-14):
    """Like bisect_monotone but reports a missing bracket instead of raising.

    Returns (x, status): status is "root" with x the root, or "above" /
    "below" when f exceeds / falls short of target at both ends, with x None.
    """
    glo = f(lo) - target
    ghi = f(hi) - target
    if glo == 0 or ghi == 0 or _sign(glo) != _sign(ghi):
        return bisect_monotone(f, lo, hi, target, tol), "root"
    return None, ("above" if glo > 0 else "below")


# ---------------------------------------------------------------------------
# interval splitting

def split_sum_bounds(f, a, b, shape):
    """Bounds on sum_{k=a}^{b} f(k) for f with a sign-definite second difference.

    shape="concave": trapezoid below, tangent lines at the ends above;
    shape="convex": the reverse.  The split index is taken at floor/ceil of
    the closed-form optimum (midpoint when r_b = 1 makes it undefined).
    Endpoint values f(a), f(b) must be positive.
    """
    a, b = int(a), int(b)
    if a >= b:
        v = f(a)
        return BoundPair(v, v)
    fa, fb = f(a), f(b)
    if b == a + 1:
        return BoundPair(fa + fb, fa + fb)
    r_a = f(a + 1) / fa
    r_b = f(b - 1) / fb
    r_ab = fa / fb
    trap = (b - a + 1) * (fa + fb) / 2

    def chord(i):
        al = (i + 1 - a) * (1 + (i - a) * (r_a - 1) / 2)
        be = (b - i) * (1 + (b - i - 1) * (r_b - 1) / 2)
        return al * fa + be * fb

    cands = set()
    den = 1 - r_b
    j = None
    if den != 0:
        denom = 1 + r_ab * (1 - r_a) / den
        if denom != 0:
            j = a + (b - a - (1 - r_ab) / den) / denom
    if j is None or not math.isfinite(j):
        cands.add((a + b) // 2)
    else:
        cands.update((math.floor(j), math.ceil(j)))
    cands = {min(max(i, a + 1), b - 1) for i in cands}
    vals = [chord(i) for i in sorted(cands)]
    if shape == "concave":
        return BoundPair(trap, max(trap, min(vals)))
    if shape == "convex":
        return BoundPair(min(trap, max(vals)), trap)
    raise ValueError("shape must be 'concave' or 'convex'")


def split_integral_bounds(f, fprime, a, b, shape):
    """Bounds on the integral of f over [a, b] from the chord and the two end
    tangents meeting at their intersection point."""
    fa, fb = f(a), f(b)
    da, db = fprime(a), fprime(b)
    trap = (fa + fb) * (b - a) / 2
    s = (fb - fa) / (b - a)
    if da != db:
        t = (fb - fa + a * da - b * db) / (da - db)
        t = min(max(t, a), b)
    else:
        t = 0.5 * (a + b)
    # integral of the tangent envelope equals trap + delta
    delta = (da - s) * (t - a) ** 2 / 2 - (db - s) * (b - t) ** 2 / 2
    if shape == "concave":
        return BoundPair(trap, max(trap, trap + delta))
    if shape == "convex":
        return BoundPair(min(trap, trap + delta), trap)
    raise ValueError("shape must be 'concave' or 'convex'")


# ---------------------------------------------------------------------------
# triangular partition for integer-valued independent U, V
#
# probU(x, y) and probV(x, y) return P{x <= U <= y}; they must return 0 when
# x > y.

def _tri_split(i, j, k, orient):
    """One partition step.  Returns (rect, children) where rect is
    ((u0, u1), (v0, v1)) and children are (i, j, k) triples."""
    if orient == "lower":
        m = (k + i - j) // 2
        mp = -((-(k - i + j)) // 2)
        return ((i, m), (j, mp - 1)), [(m + 1, j, k), (i, mp, k)]
    m = -((-(k + i - j)) // 2)
    mp = (k - i + j) // 2
    return ((m, i), (mp + 1, j)), [(i, mp, k), (m - 1, j, k)]


def _tri_empty(i, j, k, orient):
    return i + j > k if orient == "lower" else i + j < k


def _tri_box(i, j, k, orient):
    if orient == "lower":
        return (i, k - j), (j, k - i)
    return (k - j, i), (k - i, j)


class TriangleRefiner:
    """Bracket for P{U >= i, V >= j, U + V <= k} (orient "lower") or
    P{U <= i, V <= j, U + V >= k} (orient "upper"), refined by always
    splitting the pending triangle with the largest bound gap."""

    def __init__(self, probU, probV, i, j, k, orient="lower"):
        if orient not in ("lower", "upper"):
            raise ValueError("orient must be 'lower' or 'upper'")
        self.pu, self.pv, self.orient = probU, probV, orient
        self.exact = 0.0
        self._heap = []
        self._push(i, j, k)

    def _box(self, i, j, k):
        (u0, u1), (v0, v1) = _tri_box(i, j, k, self.orient)
        return self.pu(u0, u1) * self.pv(v0, v1)

    def _push(self, i, j, k):
        if _tri_empty(i, j, k, self.orient):
            return
        if i + j == k:
            # single lattice point
            self.exact += self.pu(i, i) * self.pv(j, j)
            return
        ub = self._box(i, j, k)
        if ub > 0:
            heapq.heappush(self._heap, (-ub, (i, j, k)))

    @property
    def bounds(self):
        pend = sum(-g for g, _ in self._heap)
        return BoundPair(self.exact, self.exact + pend)

    @property
    def done(self):
        return not self._heap

    def step(self):
        if not self._heap:
            return False
        _, (i, j, k) = heapq.heappop(self._heap)
        ((u0, u1), (v0, v1)), kids = _tri_split(i, j, k, self.orient)
        self.exact += self.pu(u0, u1) * self.pv(v0, v1)
        for t in kids:
            self._push(*t)
        return True

    def refine(self, budget=64):
        for _ in range(budget):
            if not self.step():
                break
        return self.bounds


def triangle_prob_bounds(probU, probV, i, j, k, orientation="lower", budget=64):
    """Bracket from ``budget`` refinement splits (None: run to exactness)."""
    r = TriangleRefiner(probU, probV, i, j, k, orientation)
    if budget is None:
        while r.step():
            pass
        return r.bounds
    return r.refine(budget)


@dataclass(frozen=True)
class DecomposeTerms:
    product: float
    upper_triangle: float   # P{U <= u_hi, V <= v_hi, U + V > f_lo}
    lower_triangle: float   # P{U >= u_lo, V >= v_lo, U + V < e_hi}
    limits: tuple           # (e_hi, f_lo, u_lo, u_hi, v_lo, v_hi)

    @property
    def total(self):
        return self.product - self.upper_triangle - self.lower_triangle


def rect_prob_decompose(probU, probV, a, b, c, d, e, f):
    """P{a<=U<=b, c<=V<=d, e<=U+V<=f} as a product minus two triangles.

    Integer-valued U, V; the triangle terms are evaluated exactly by the
    triangular partition.
    """
    e_hi = max(e, a + c)
    f_lo = min(f, b + d)
    u_lo, u_hi = max(a, e_hi - d), min(b, f_lo - c)
    v_lo, v_hi = max(c, e_hi - b), min(d, f_lo - a)
    lim = (e_hi, f_lo, u_lo, u_hi, v_lo, v_hi)
    if e_hi > f_lo or u_lo > u_hi or v_lo > v_hi:
        return DecomposeTerms(0.0, 0.0, 0.0, lim)
    prod = probU(u_lo, u_hi) * probV(v_lo, v_hi)
    up = triangle_prob_bounds(probU, probV, u_hi, v_hi, f_lo + 1, "upper", None).lower
    lo = triangle_prob_bounds(probU, probV, u_lo, v_lo, e_hi - 1, "lower", None).lower
    return DecomposeTerms(prod, up, lo, lim)
