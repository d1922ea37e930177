"""Multistage sampling plans with guaranteed coverage."""

__version__ = "0.1.0"

from .rules import (ErrorSpec, Plan, Schedule, StageBoundary, Decision, build_plan,
                    build_schedule, evaluate, with_zeta)
from .coverage import exact_complement, asn, cdv_bounds, path_counts
from .tuning import amca_check, bisection_tune
from .sim import simulate
from .estimator import MultistagePlanDesigner

__all__ = [
    "ErrorSpec", "Plan", "Schedule", "StageBoundary", "Decision", "build_plan",
    "build_schedule", "evaluate", "with_zeta", "exact_complement", "asn", "cdv_bounds",
    "path_counts", "amca_check", "bisection_tune", "simulate", "MultistagePlanDesigner",
]
