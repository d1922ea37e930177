import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import enumerate_binomial, enumerate_hyper, random_binomial_plan
from seqplan.coverage import (
    TooWide, asn, cdv_bounds, complement_bounds_on_interval, exact_complement, lattice_points,
    path_counts, path_recursion, truncate_windows,
)
from seqplan.rules import ErrorSpec, StageBoundary, build_plan


def _abs_plan(sizes, eps=0.3, zeta=0.5, delta=0.05):
    return build_plan("binomial-abs", ErrorSpec("absolute", delta, eps=eps), zeta, sizes=sizes)


def test_single_stage_example():
    p = _abs_plan((5,))
    r = exact_complement(p, 0.5)
    assert abs(r.complement - 12 / 32) < 1e-15
    assert r.bound_kind == "exact" and r.upper == r.complement
    assert r.asn.lower == r.asn.upper == 5


def test_single_stage_closed_form():
    n, eps = 30, 0.1
    p = _abs_plan((n,), eps=eps)
    for th in (0.05, 0.2, 0.5, 0.61):
        ref = math.fsum(math.comb(n, k) * th ** k * (1 - th) ** (n - k) for k in range(n + 1)
                        if abs(k / n - th) >= eps - 1e-12)
        assert abs(exact_complement(p, th).complement - ref) < 1e-13


def test_two_stage_path_counts_and_asn():
    p = _abs_plan((2, 4))
    p = replace(p, boundaries=(StageBoundary(1, 2, ((1, 1),)), StageBoundary(2, 4, ())))
    nu = path_counts(p)
    assert nu[0] == {0: 1, 1: 2, 2: 1}
    assert nu[1] == {1: 2, 2: 4, 3: 2}
    a = asn(p, 0.5)
    assert abs(a.lower - 3) < 1e-14 and abs(a.upper - 3) < 1e-14


def test_single_stage_counts_are_binomials():
    p = _abs_plan((9,))
    assert path_counts(p)[0] == {k: math.comb(9, k) for k in range(10)}
    pd = path_recursion(p, 0.3)
    for k in range(10):
        assert abs(pd.log_nu(1)[k] - math.log(math.comb(9, k))) < 1e-12


def test_path_counts_match_log_nu():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = random_binomial_plan(rng, random_sets=True)
        nu = path_counts(p)
        pd = path_recursion(p, 0.4)
        for ell in range(1, len(pd.stages) + 1):
            ln = pd.log_nu(ell)
            for k, v in nu[ell - 1].items():
                if v:
                    assert abs(ln[k] - math.log(v)) < 1e-10


def test_zero_eta_gives_full_windows():
    p = _abs_plan((4, 8, 11), eps=0.2)
    pd = path_recursion(p, 0.37, 0.0)
    assert pd.windows[0] == (0, 4)
    assert truncate_windows(p, 0.37, 0.0) == [(0, 4), (0, 8), (0, 11)]


def test_enumeration_equivalence_random():
    rng = np.random.default_rng(2)
    for _ in range(15):
        p = random_binomial_plan(rng, random_sets=bool(rng.random() < 0.5))
        for th in (0.0, float(rng.uniform()), 0.5, 1.0):
            r = exact_complement(p, th)
            comp, pmf, used, surv = enumerate_binomial(p, th)
            assert abs(r.complement - comp) <= 1e-12
            assert all(abs(a - b) <= 1e-12 for a, b in zip(r.stop_pmf, pmf))
            assert abs(r.asn.upper - used) <= 1e-12 * max(1, used)
            assert abs(math.fsum(r.stop_pmf) + r.survival - 1) <= 1e-10


def test_hyper_enumeration():
    spec = ErrorSpec("absolute", 0.1, eps=0.15)
    p = build_plan("finite-pop-abs", spec, 0.5, N=12, sizes=(4, 8))
    for M in (0, 3, 6, 11, 12):
        r = exact_complement(p, M / 12)
        comp, pmf, used = enumerate_hyper(p, M)
        assert abs(r.complement - comp) <= 1e-12
        assert abs(r.asn.upper - used) <= 1e-12 * used
        assert abs(sum(r.stop_pmf) - 1) <= 1e-10


def test_asn_bounds():
    rng = np.random.default_rng(3)
    for _ in range(10):
        p = random_binomial_plan(rng)
        n1, ns = p.boundaries[0].size, p.boundaries[-1].size
        a = asn(p, float(rng.uniform()))
        assert n1 - 1e-12 <= a.lower <= a.upper <= ns + 1e-12


def test_asn_inverse_requires_positive_theta():
    p = build_plan("binomial-rel-inverse", ErrorSpec("relative", 0.05, eps=0.2))
    with pytest.raises(ValueError):
        asn(p, 0.0, 1e-10)


def test_unbounded_law_needs_eta():
    p = build_plan("poisson-abs", ErrorSpec("absolute", 0.05, eps=0.3))
    with pytest.raises(ValueError, match="eta"):
        exact_complement(p, 1.0)


def test_theta_outside_space():
    p = _abs_plan((5,))
    for bad in (-0.1, 1.2, math.nan):
        with pytest.raises(ValueError):
            exact_complement(p, bad)


# -- truncation -----------------------------------------------------------------

@pytest.mark.parametrize("eta", [1e-4, 1e-8])
def test_truncation_error_within_eta(eta):
    spec = ErrorSpec("absolute", 0.05, eps=0.1)
    p = build_plan("binomial-abs", spec, 0.2)
    for th in (0.05, 0.3, 0.5, 0.77):
        ex = exact_complement(p, th, 0.0)
        tr = exact_complement(p, th, eta)
        assert tr.complement - eta <= ex.complement <= tr.upper
        assert abs(tr.complement - ex.complement) <= eta


def test_truncation_huge_eta_keeps_mode():
    p = _abs_plan((40, 80), eps=0.1)
    ws = truncate_windows(p, 0.3, 0.9)
    lo, hi = ws[0]
    assert lo <= 12 <= hi


# -- CDV -----------------------------------------------------------------------

def test_cdv_single_stage_exact():
    p = _abs_plan((7,))
    ex = exact_complement(p, 0.4).complement
    b = cdv_bounds(p, 0.4, r=0)
    assert abs(b.lower - ex) < 1e-14 and abs(b.upper - ex) < 1e-14


def test_cdv_brackets_random():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = random_binomial_plan(rng, smax=4, random_sets=bool(rng.random() < 0.5))
        th = float(rng.uniform(0.02, 0.98))
        ex = exact_complement(p, th).complement
        sdv = cdv_bounds(p, th, r=0)
        ddv = cdv_bounds(p, th, r=1)
        full = cdv_bounds(p, th, r=max(p.s - 1, 0))
        for b in (sdv, ddv):
            assert b.lower - 1e-12 <= ex <= b.upper + 1e-12
        assert sdv.lower - 1e-12 <= ddv.lower and ddv.upper <= sdv.upper + 1e-12
        assert full.width <= ddv.width + 1e-12 <= sdv.width + 2e-12
        assert abs(full.upper - ex) < 1e-12


def test_ddv_polygon_equals_convolution():
    rng = np.random.default_rng(5)
    for _ in range(8):
        p = random_binomial_plan(rng, smax=3)
        th = float(rng.uniform(0.05, 0.95))
        a = cdv_bounds(p, th, r=1)
        b = cdv_bounds(p, th, r=1, method="polygon")
        assert abs(a.lower - b.lower) < 1e-12 and abs(a.upper - b.upper) < 1e-12


def test_cdv_rejects_middle_r():
    p = _abs_plan((3, 6, 9, 12), eps=0.1)
    with pytest.raises(NotImplementedError):
        cdv_bounds(p, 0.5, r=2)


# -- interval bounding and lattices --------------------------------------------

def test_interval_degenerate_equals_exact():
    p = _abs_plan((10, 20), eps=0.15)
    b = complement_bounds_on_interval(p, 0.31, 0.31)
    ex = exact_complement(p, 0.31).complement
    assert abs(b.upper - ex) < 1e-14 and abs(b.lower - ex) < 1e-14


def test_interval_bracket_contains_grid_max():
    p = _abs_plan((15, 30), eps=0.12, zeta=0.3)
    rng = np.random.default_rng(6)
    done = 0
    while done < 10:
        a = float(rng.uniform(0, 0.98))
        b = a + float(rng.uniform(0, 0.02))
        try:
            bp = complement_bounds_on_interval(p, a, b)
        except TooWide:
            continue
        grid = np.linspace(a, b, 1000)
        mx = max(exact_complement(p, float(t)).complement for t in grid)
        assert mx <= bp.upper + 1e-12
        done += 1


def test_interval_too_wide():
    p = _abs_plan((10,), eps=0.1)
    with pytest.raises(TooWide):
        complement_bounds_on_interval(p, 0.1, 0.9)


def test_lattice_points_single_stage():
    p = _abs_plan((5,), eps=0.3)
    pts = lattice_points(p, 0.0, 1.0)
    expect = {0.0, 1.0}
    for k in range(6):
        for v in (k / 5 - 0.3, k / 5 + 0.3):
            if 0 <= v <= 1:
                expect.add(v)
    assert len(pts) == len(expect)
    assert all(min(abs(x - y) for y in expect) < 1e-15 for x in pts)
    assert lattice_points(p, 0.42, 0.42) == [0.42]


def test_lattice_points_finite_pop():
    p = build_plan("finite-pop-abs", ErrorSpec("absolute", 0.1, eps=0.15), 0.5, N=20, sizes=(5, 10))
    pts = lattice_points(p, 0.0, 1.0)
    assert all(abs(x * 20 - round(x * 20)) < 1e-12 for x in pts)


@settings(max_examples=15)
@given(st.integers(3, 15), st.floats(0.05, 0.3), st.floats(0.05, 0.9))
def test_one_sided_miss_monotone_between_lattice(n, eps, zeta):
    p = _abs_plan((n,), eps=eps, zeta=zeta)
    pts = lattice_points(p, 0.0, 1.0)
    L = [k / n - eps for k in range(n + 1)]
    U = [k / n + eps for k in range(n + 1)]
    pL = lambda t: sum(math.comb(n, k) * t ** k * (1 - t) ** (n - k) for k in range(n + 1) if L[k] >= t)
    pU = lambda t: sum(math.comb(n, k) * t ** k * (1 - t) ** (n - k) for k in range(n + 1) if U[k] <= t)
    for a, b in zip(pts, pts[1:]):
        if b - a < 1e-9:
            continue
        grid = np.linspace(a, b, 12)[1:-1]
        vl = [pL(float(t)) for t in grid]
        vu = [pU(float(t)) for t in grid]
        assert all(y >= x - 1e-12 for x, y in zip(vl, vl[1:]))
        assert all(y <= x + 1e-12 for x, y in zip(vu, vu[1:]))
