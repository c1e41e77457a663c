"""Elastic priors for dynamic borrowing of historical control data."""

from .types import (
    BinarySummary,
    CalibrationInfeasible,
    CalibrationSpec,
    DataError,
    IntervalSufficientStats,
    LogisticElastic,
    NormalSummary,
    StepElastic,
    SurvivalData,
    survival_sufficient_stats,
)
from .elastic import eval_elastic, solve_logistic, solve_step

__version__ = "0.1.0"
