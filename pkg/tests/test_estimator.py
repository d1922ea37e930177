import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from seqplan import MultistagePlanDesigner
from seqplan.coverage import exact_complement
from seqplan.rules import evaluate


@pytest.fixture(scope="module")
def fitted():
    return MultistagePlanDesigner(eps=0.1, delta=0.05, tune=False).fit()


def test_fit_safe(fitted):
    assert list(fitted.sizes_) == [60, 120, 240]
    assert fitted.zeta_ == pytest.approx(1 / 6) and fitted.n_stages_ == 3
    assert fitted.certificate_ is None


def test_fixed_zeta():
    est = MultistagePlanDesigner(eps=0.1, delta=0.05, zeta=0.2).fit()
    assert list(est.sizes_) == [58, 116, 231]


def test_params_and_clone(fitted):
    p = fitted.get_params()
    assert p["eps"] == 0.1 and p["family"] == "binomial-abs"
    c = clone(fitted)
    assert not hasattr(c, "plan_") and c.get_params() == p
    c.set_params(eps=0.2)
    assert c.fit().sizes_[-1] < 240


def test_predict_matches_evaluate(fitted):
    X = np.array([[1, 0], [1, 30], [2, 60], [3, 100], [1, 5]])
    stop = fitted.predict(X)
    iv = fitted.predict_interval(X)
    for (st, k), s, row in zip(X, stop, iv):
        d = evaluate(fitted.plan_, int(st), int(k))
        assert s == int(d.stop)
        if d.stop:
            assert tuple(row) == (d.estimate, d.lower, d.upper)
        else:
            assert np.isnan(row).all()


def test_predict_validation(fitted):
    with pytest.raises(NotFittedError):
        MultistagePlanDesigner(eps=0.1).predict([[1, 0]])
    with pytest.raises(ValueError):
        fitted.predict([[1, 2, 3]])
    with pytest.raises(ValueError):
        fitted.predict([[1.5, 2]])


def test_coverage_and_asn(fitted):
    cov = fitted.coverage([0.2, 0.5])
    ref = [1 - exact_complement(fitted.plan_, t).upper for t in (0.2, 0.5)]
    assert np.allclose(cov, ref, rtol=0, atol=0)
    a = fitted.expected_sample_number(0.5)
    assert 60 <= a[0] <= 240


def test_tuned_fit():
    est = MultistagePlanDesigner(eps=0.2, delta=0.1).fit()
    assert est.plan_.tuned and est.certificate_
    assert max(u for _, _, u in est.certificate_) < 0.1
