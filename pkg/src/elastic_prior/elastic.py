"""Elastic functions: evaluation and closed-form logistic calibration."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .types import CalibrationInfeasible, ElasticFunction, LogisticElastic, StepElastic


def eval_elastic(f: ElasticFunction, T):
    """Borrowing fraction g(T) in [0, 1]; accepts scalars or arrays.

    For the logistic form T = 0 maps to the limit g = 1. With c != 1 the
    power is applied sign-preserving, sign(log T) * |log T|^c, so g stays
    monotone on both sides of T = 1.
    """
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise ValueError("congruence statistic must be >= 0")
    if isinstance(f, StepElastic):
        g = (T <= f.threshold).astype(float)
    else:
        with np.errstate(divide="ignore"):
            logT = np.log(T)
        if f.c != 1.0:
            logT = np.sign(logT) * np.abs(logT) ** f.c
        with np.errstate(invalid="ignore"):
            z = f.a + f.b * logT
        g = expit(-z)
    return float(g) if g.ndim == 0 else g


def solve_logistic(C1: float, C2: float, T_q0: float, T_q1: float) -> LogisticElastic:
    """Logistic (a, b) with g(T_q0) = C1 and g(T_q1) = C2.

    Raises :class:`CalibrationInfeasible` when the quantiles cross.
    """
    if not 0 < C2 < C1 < 1:
        raise ValueError(f"need 0 < C2 < C1 < 1, got C1={C1}, C2={C2}")
    if not (T_q0 > 0 and math.isfinite(T_q1)):
        raise CalibrationInfeasible(f"quantiles must be positive and finite (T_q0={T_q0}, T_q1={T_q1})")
    if T_q0 >= T_q1:
        raise CalibrationInfeasible(
            f"quantile crossing: T_q0={T_q0:.6g} >= T_q1={T_q1:.6g}; "
            "delta too small to separate congruent from incongruent data"
        )
    l0, l1 = math.log(T_q0), math.log(T_q1)
    # logit(1 - C) = a + b log T at both anchors
    z0 = math.log((1 - C1) / C1)
    z1 = math.log((1 - C2) / C2)
    b = (z1 - z0) / (l1 - l0)
    a = z0 - b * l0
    return LogisticElastic(a=a, b=b)


def solve_step(T_q0: float) -> StepElastic:
    if not T_q0 > 0:
        raise CalibrationInfeasible(f"step threshold must be positive, got {T_q0}")
    return StepElastic(threshold=float(T_q0))
