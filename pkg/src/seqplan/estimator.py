"""Estimator-style wrapper: fit designs (and tunes) a plan, predict applies it."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .coverage import asn, exact_complement
from .rules import build_plan, evaluate
from .tuning import bisection_tune

__all__ = ["MultistagePlanDesigner"]


class MultistagePlanDesigner(BaseEstimator):
    """Design a multistage plan from a precision target.

    ``fit`` ignores its data arguments; the plan depends only on the
    hyperparameters.  With ``zeta=None`` and ``tune=True`` the coverage
    parameter is tuned, with ``tune=False`` the family's safe value is used.

    ``predict`` takes rows ``(stage, observation)`` and returns 1 where
    sampling stops; ``predict_interval`` gives ``(estimate, lower, upper)``
    with NaN on rows that continue.
    """

    def __init__(self, family="binomial-abs", delta=0.05, eps=None, eps_a=None, eps_r=None,
                 rule=None, rho=2.0, zeta=None, tune=True, N=None, param_range=None, options=None):
        self.family = family
        self.delta = delta
        self.eps = eps
        self.eps_a = eps_a
        self.eps_r = eps_r
        self.rule = rule
        self.rho = rho
        self.zeta = zeta
        self.tune = tune
        self.N = N
        self.param_range = param_range
        self.options = options

    def fit(self, X=None, y=None):
        from .cli import spec_for
        spec = spec_for(self.family, self.delta, self.eps, self.eps_a, self.eps_r)
        opts = dict(self.options or {})
        lo, hi = self.param_range if self.param_range is not None else (None, None)
        if self.zeta is None and self.tune:
            res = bisection_tune(self.family, spec, self.rule, lo, hi, rho=self.rho, N=self.N, **opts)
            self.plan_ = res.plan
            self.certificate_ = res.certificate
        else:
            self.plan_ = build_plan(self.family, spec, self.zeta, self.rule, self.rho, self.N, **opts)
            self.certificate_ = None
        self.zeta_ = self.plan_.zeta
        self.sizes_ = np.array([b.size for b in self.plan_.boundaries])
        self.n_stages_ = len(self.sizes_)
        return self

    def _decisions(self, X):
        check_is_fitted(self, "plan_")
        X = check_array(X, dtype=float, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: stage, observation")
        if np.any(X[:, 0] != np.round(X[:, 0])):
            raise ValueError("stage column must hold integers")
        return [evaluate(self.plan_, int(st), v) for st, v in X]

    def predict(self, X):
        return np.array([d.stop for d in self._decisions(X)], dtype=int)

    def predict_interval(self, X):
        out = np.full((len(X), 3), np.nan)
        for i, d in enumerate(self._decisions(X)):
            if d.stop:
                out[i] = d.estimate, d.lower, d.upper
        return out

    def coverage(self, thetas, eta=0.0):
        """Coverage probability (conservative when eta > 0) at each theta."""
        check_is_fitted(self, "plan_")
        return np.array([1.0 - exact_complement(self.plan_, float(t), eta).upper
                         for t in np.atleast_1d(thetas)])

    def expected_sample_number(self, thetas, eta=0.0):
        check_is_fitted(self, "plan_")
        return np.array([asn(self.plan_, float(t), eta).upper for t in np.atleast_1d(thetas)])
