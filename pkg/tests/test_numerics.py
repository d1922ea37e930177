import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqplan.distributions import binom_pmf, mb
from seqplan.numerics import (
    BoundPair, NoBracketError, TriangleRefiner, bisect_monotone, rect_prob_decompose,
    root_or_clamp, split_integral_bounds, split_sum_bounds, triangle_prob_bounds,
)


def test_boundpair_order():
    with pytest.raises(ValueError):
        BoundPair(1.0, 0.0)
    b = BoundPair(0.1, 0.3)
    assert 0.2 in b and b.width == pytest.approx(0.2)


# -- bisection ---------------------------------------------------------------

def test_bisect_identity():
    assert abs(bisect_monotone(lambda x: x, 0, 1, 0.5, 1e-12) - 0.5) <= 1e-12
    assert abs(bisect_monotone(lambda x: -x, 0, 1, -0.25, 1e-12) - 0.25) <= 1e-12


def test_bisect_rate_residual():
    f = lambda z: mb(z, z + 0.1)
    z = bisect_monotone(f, 0.0, 0.4, -0.05, 1e-14)
    assert abs(f(z) + 0.05) <= 1e-10


def test_bisect_eval_budget():
    calls = []
    f = lambda x: (calls.append(x), x ** 3)[1]
    tol = 1e-9
    bisect_monotone(f, -1, 2, 0.3, tol)
    assert len(calls) <= math.ceil(math.log2(3 / tol)) + 2


def test_bisect_no_bracket_message():
    with pytest.raises(NoBracketError, match="f\\(lo\\)"):
        bisect_monotone(lambda x: x, 0, 1, 5)


def test_bisect_neg_inf_endpoint():
    f = lambda x: -math.inf if x == 0 else math.log(x)
    x = bisect_monotone(f, 0.0, 1.0, -2.0, 1e-13)
    assert abs(x - math.exp(-2)) < 1e-12


def test_root_or_clamp_status():
    assert root_or_clamp(lambda x: x, 0, 1, 2) == (None, "below")
    assert root_or_clamp(lambda x: x, 0, 1, -1) == (None, "above")
    x, st_ = root_or_clamp(lambda x: x, 0, 1, 0.3)
    assert st_ == "root" and abs(x - 0.3) < 1e-13


@given(st.floats(-5, 5), st.floats(0.1, 3))
def test_bisect_property(target, slope):
    f = lambda x: slope * x
    lo, hi = -100, 100
    x = bisect_monotone(f, lo, hi, target, 1e-10)
    assert abs(x - target / slope) <= 1e-10


# -- split sum / integral bounds ----------------------------------------------

def test_split_sum_constant():
    b = split_sum_bounds(lambda k: 2.5, 0, 4, "concave")
    assert b.lower == pytest.approx(12.5) and b.upper == pytest.approx(12.5)


def test_split_sum_degenerate():
    b = split_sum_bounds(lambda k: 7.0, 3, 3, "convex")
    assert b.lower == b.upper == 7.0


def test_split_sum_binomial_concave_stretch():
    n, th = 20, 0.5
    f = lambda k: float(binom_pmf(k, n, th))
    # second difference is negative near the mode
    a, b = 8, 12
    sec = [f(k - 1) - 2 * f(k) + f(k + 1) for k in range(a, b + 1)]
    assert max(sec) < 0
    exact = math.fsum(f(k) for k in range(a, b + 1))
    bp = split_sum_bounds(f, a, b, "concave")
    assert bp.lower <= exact <= bp.upper


@st.composite
def _quadratics(draw):
    c2 = draw(st.floats(0.001, 2))
    a = draw(st.integers(0, 20))
    b = a + draw(st.integers(2, 30))
    sign = draw(st.sampled_from([1, -1]))
    # shift so the function stays positive on [a, b]
    g = lambda k: sign * c2 * (k - a) * (k - b)
    off = 1 + max(abs(g(k)) for k in range(a, b + 1))
    return (lambda k: g(k) + off), a, b, ("convex" if sign > 0 else "concave")


@given(_quadratics())
def test_split_sum_brackets_random(inst):
    f, a, b, shape = inst
    exact = math.fsum(f(k) for k in range(a, b + 1))
    bp = split_sum_bounds(f, a, b, shape)
    assert bp.lower <= exact * (1 + 1e-12) and exact <= bp.upper * (1 + 1e-12)


def test_split_sum_exponential_convex():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = float(rng.uniform(0.5, 1.5))
        a = int(rng.integers(0, 10))
        b = a + int(rng.integers(2, 40))
        f = lambda k: r ** k
        exact = math.fsum(f(k) for k in range(a, b + 1))
        bp = split_sum_bounds(f, a, b, "convex")
        assert bp.lower <= exact * (1 + 1e-12) and exact <= bp.upper * (1 + 1e-12)


def test_split_sum_unit_ratio_midpoint():
    # f(b-1) = f(b): the closed-form split index is undefined, midpoint used
    f = lambda k: 30.0 - (k - 4.5) ** 2
    assert f(4) == f(5)
    exact = math.fsum(f(k) for k in range(0, 6))
    bp = split_sum_bounds(f, 0, 5, "concave")
    assert bp.lower <= exact <= bp.upper


def test_split_integral_linear():
    b = split_integral_bounds(lambda x: 3 * x + 1, lambda x: 3.0, 0.0, 2.0, "concave")
    assert b.lower == pytest.approx(8.0) and b.upper == pytest.approx(8.0)


def test_split_integral_closed_forms():
    b = split_integral_bounds(lambda x: -x * x, lambda x: -2 * x, 0.0, 1.0, "concave")
    assert b.lower <= -1 / 3 <= b.upper
    b = split_integral_bounds(math.exp, math.exp, 0.0, 1.0, "convex")
    assert b.lower <= math.e - 1 <= b.upper


def test_split_integral_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(100):
        c = float(rng.uniform(0.1, 3))
        a = float(rng.uniform(-2, 1))
        w = float(rng.uniform(0.1, 3))
        b = a + w
        # convex: exp(c x); concave: log(x + 3)
        bp = split_integral_bounds(lambda x: math.exp(c * x), lambda x: c * math.exp(c * x), a, b, "convex")
        ex = (math.exp(c * b) - math.exp(c * a)) / c
        assert bp.lower <= ex * (1 + 1e-12) and ex <= bp.upper * (1 + 1e-12)
        F = lambda x: (x + 3) * math.log(x + 3) - x
        bp = split_integral_bounds(lambda x: math.log(x + 3), lambda x: 1 / (x + 3), a, b, "concave")
        ex = F(b) - F(a)
        assert bp.lower <= ex + 1e-12 and ex <= bp.upper + 1e-12


# -- triangular partition -------------------------------------------------------

def _oracle(pmf_u, pmf_v):
    def prob(pmf):
        def p(x, y):
            if x > y:
                return 0.0
            return math.fsum(pmf.get(i, 0.0) for i in range(x, y + 1))
        return p
    return prob(pmf_u), prob(pmf_v)


def _brute(pmf_u, pmf_v, pred):
    return math.fsum(pu * pv for (u, pu), (v, pv) in itertools.product(pmf_u.items(), pmf_v.items())
                     if pred(u, v))


def test_rect_decompose_uniform_example():
    pmf = {0: 1 / 3, 1: 1 / 3, 2: 1 / 3}
    pU, pV = _oracle(pmf, pmf)
    t = rect_prob_decompose(pU, pV, 0, 2, 0, 2, -10, 2)
    assert t.total == pytest.approx(2 / 3, abs=1e-15)
    assert t.product == pytest.approx(1.0) and t.upper_triangle == pytest.approx(1 / 3)
    assert t.lower_triangle == 0


def test_rect_decompose_full_and_empty():
    pmf = {0: 0.2, 1: 0.5, 2: 0.3}
    pU, pV = _oracle(pmf, pmf)
    t = rect_prob_decompose(pU, pV, 0, 2, 0, 2, -100, 4)
    assert t.upper_triangle == 0 and t.lower_triangle == 0 and t.total == pytest.approx(1.0)
    t = rect_prob_decompose(pU, pV, 0, 2, 0, 2, 5, 9)
    assert t.total == 0


def _rand_pmf(rng, size):
    w = rng.uniform(0.01, 1, size)
    w /= w.sum()
    start = int(rng.integers(-3, 4))
    return {start + i: float(x) for i, x in enumerate(w)}


def test_rect_decompose_identity_random():
    rng = np.random.default_rng(9)
    for _ in range(200):
        pu, pv = _rand_pmf(rng, int(rng.integers(1, 11))), _rand_pmf(rng, int(rng.integers(1, 11)))
        pU, pV = _oracle(pu, pv)
        a, b = sorted(int(x) for x in rng.integers(-4, 12, 2))
        c, d = sorted(int(x) for x in rng.integers(-4, 12, 2))
        e, f = sorted(int(x) for x in rng.integers(-8, 24, 2))
        t = rect_prob_decompose(pU, pV, a, b, c, d, e, f)
        ref = _brute(pu, pv, lambda u, v: a <= u <= b and c <= v <= d and e <= u + v <= f)
        assert abs(t.total - ref) <= 1e-14


def test_triangle_uniform_example():
    pmf = {0: 0.5, 1: 0.5}
    pU, pV = _oracle(pmf, pmf)
    r = TriangleRefiner(pU, pV, 0, 0, 1, "lower")
    assert 0.75 in r.bounds
    for _ in range(3):
        r.step()
    assert r.bounds.lower == pytest.approx(0.75) and r.bounds.upper == pytest.approx(0.75)


def test_triangle_empty_and_point():
    pmf = {0: 1.0}
    pU, pV = _oracle(pmf, pmf)
    assert triangle_prob_bounds(pU, pV, 2, 2, 1, "lower") == BoundPair(0.0, 0.0)
    b = triangle_prob_bounds(pU, pV, 0, 0, 0, "lower", budget=1)
    assert b.lower == b.upper == 1.0


def test_triangle_gap_monotone_random():
    rng = np.random.default_rng(21)
    for _ in range(100):
        pu, pv = _rand_pmf(rng, int(rng.integers(1, 9))), _rand_pmf(rng, int(rng.integers(1, 9)))
        pU, pV = _oracle(pu, pv)
        orient = "lower" if rng.random() < 0.5 else "upper"
        i, j = int(rng.integers(-3, 6)), int(rng.integers(-3, 6))
        k = i + j + int(rng.integers(0, 8)) * (1 if orient == "lower" else -1)
        if orient == "lower":
            ref = _brute(pu, pv, lambda u, v: u >= i and v >= j and u + v <= k)
        else:
            ref = _brute(pu, pv, lambda u, v: u <= i and v <= j and u + v >= k)
        r = TriangleRefiner(pU, pV, i, j, k, orient)
        gap = r.bounds.width
        while True:
            b = r.bounds
            assert b.lower - 1e-14 <= ref <= b.upper + 1e-14
            assert b.width <= gap + 1e-15
            gap = b.width
            if not r.step():
                break
        assert abs(r.bounds.lower - ref) <= 1e-14
