import math

import numpy as np
import pytest

from oracles import random_designed_plan
from seqplan import tuning
from seqplan.coverage import exact_complement
from seqplan.rules import ErrorSpec, build_plan, get_design
from seqplan.tuning import (
    TuningError, amca_check, bisection_tune, initial_zeta, lambda_bar_certificate, lattice_sweep,
)


def _small():
    return build_plan("binomial-abs", ErrorSpec("absolute", 0.1, eps=0.2), 0.5, sizes=(8, 16, 24))


def test_amca_constant_oracles():
    p = _small()
    ok = amca_check(p, 0.1, 0.0, 1.0, oracle=lambda a, b: 0.0)
    assert ok.passed and ok.certificate[-1][0] == 0.0
    # certified intervals tile [lo, hi] from the right
    cert = ok.certificate
    assert cert[0][1] == 1.0
    assert all(abs(x[0] - y[1]) == 0 for x, y in zip(cert, cert[1:]))
    bad = amca_check(p, 0.1, 0.0, 1.0, oracle=lambda a, b: 0.2)
    assert not bad.passed and bad.failed_at is not None


def test_amca_too_wide_forces_halving():
    calls = []

    def oracle(a, b):
        calls.append(b - a)
        return None if b - a > 0.1 else 0.0
    res = amca_check(_small(), 0.1, 0.0, 1.0, d0=0.5, oracle=oracle)
    assert res.passed
    assert all(b - a <= 0.1 + 1e-15 for a, b, _ in res.certificate)


def test_amca_pass_implies_grid_ok():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(10):
        p = random_designed_plan(rng)
        delta = p.spec.delta
        res = amca_check(p, delta, 1e-9, 1 - 1e-9)
        if res.passed:
            checked += 1
            grid = np.linspace(1e-9, 1 - 1e-9, 2000)
            assert max(exact_complement(p, float(t)).complement for t in grid) < delta
    assert checked >= 1


def test_amca_fails_when_grid_violates():
    p = _small()
    worst = max(exact_complement(p, float(t)).complement for t in np.linspace(0.01, 0.99, 99))
    res = amca_check(p, 0.5 * worst, 1e-9, 1 - 1e-9)
    assert not res.passed and res.failed_at is not None


def test_initial_zeta_values():
    p = build_plan("binomial-abs", ErrorSpec("absolute", 0.05, eps=0.1))
    safe, z0 = initial_zeta(p)
    assert abs(safe - 1 / 6) < 1e-15 and z0 == 0.5
    pi = build_plan("poisson-rel", ErrorSpec("relative", 0.05, eps=0.3))
    d = get_design(pi)
    if pi.schedule.infinite and pi.schedule.tau == 3:
        assert abs(initial_zeta(pi)[0] - 1 / 8) < 1e-15
    assert abs(d.zeta_safe(pi.schedule) - 1 / (2 * (pi.schedule.tau + 1))) < 1e-15
    one = build_plan("binomial-abs", ErrorSpec("absolute", 0.05, eps=0.1), sizes=(300,))
    assert abs(get_design(one).zeta_safe(one.schedule) - 0.5) < 1e-15


def test_bisection_tune_small():
    spec = ErrorSpec("absolute", 0.1, eps=0.2)
    res = bisection_tune("binomial-abs", spec, rtol=1e-2)
    assert res.zeta >= res.zeta_safe
    zs = [z for z, ok in res.history if ok]
    fs = [z for z, ok in res.history if not ok]
    assert not fs or max(zs) < min(fs)
    grid = np.linspace(1e-9, 1 - 1e-9, 2000)
    assert max(exact_complement(res.plan, float(t)).complement for t in grid) < 0.1
    assert res.plan.tuned


def test_tune_capped(monkeypatch):
    monkeypatch.setattr(tuning, "amca_check",
                        lambda *a, **k: tuning.AmcaResult(True, [(0.0, 1.0, 0.0)], None, 1))
    res = bisection_tune("binomial-abs", ErrorSpec("absolute", 0.1, eps=0.2))
    assert res.capped
    assert res.zeta == pytest.approx((1 - tuning.ZETA_CAP_SLACK) / 0.1)


def test_tune_fails_at_safe(monkeypatch):
    monkeypatch.setattr(tuning, "amca_check",
                        lambda *a, **k: tuning.AmcaResult(False, [], (0.0, 1.0), 1))
    with pytest.raises(TuningError, match="safe"):
        bisection_tune("binomial-abs", ErrorSpec("absolute", 0.1, eps=0.2))


def test_lattice_sweep_finite_pop():
    p = build_plan("finite-pop-abs", ErrorSpec("absolute", 0.1, eps=0.15), None, N=20)
    res = lattice_sweep(p, 0.1)
    assert res.evaluations == 21
    assert [c[0] for c in res.certificate] == [m / 20 for m in range(21)]
    assert res.passed == all(c[2] < 0.1 for c in res.certificate)


def test_amca_finite_pop_lattice_steps():
    p = build_plan("finite-pop-abs", ErrorSpec("absolute", 0.1, eps=0.15), None, N=20)
    res = amca_check(p, 0.1, 0.0, 1.0)
    for a, b, _ in res.certificate:
        assert abs(a * 20 - round(a * 20)) < 1e-12 and abs(b * 20 - round(b * 20)) < 1e-12


def test_lambda_bar_certificate():
    p = build_plan("poisson-rel", ErrorSpec("relative", 0.05, eps=0.3))
    lam = lambda_bar_certificate(p)
    eps = 0.3
    from seqplan.distributions import mp
    tot = sum(math.exp(b.size * mp(lam * (1 + eps), lam)) for b in p.boundaries)
    assert abs(tot - 0.025) < 1e-9
