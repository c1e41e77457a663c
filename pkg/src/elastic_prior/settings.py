"""Benchmark simulation settings: scenario grids and calibration specs.

Scenario 1 of each grid is the congruent null the design is calibrated on.
"""

from __future__ import annotations

import math

import numpy as np

from .simulator import Scenario
from .types import CalibrationSpec

SURVIVAL_CUTS = (16.0, 28.0, math.inf)
SURVIVAL_HAZARDS = np.array([0.01, 0.03, 0.02])
MAP_SIZES = (40, 50, 45, 55)


def normal_scenarios():
    rows = [(1, 1, 1), (1, 1, 1.5), (0.9, 1, 1.5), (1.1, 1, 1.5), (0, 1, 1), (-0.5, 1, 1), (2, 1, 1.5), (2.5, 1, 1.5)]
    return [
        Scenario("normal", (h, 1.0), (c, 1.0), (t, 1.0), 50, 25, 50, label=str(i + 1))
        for i, (h, c, t) in enumerate(rows)
    ]


def normal_spec(seed=0, **kw):
    return CalibrationSpec(delta=1.0, effect=0.5, seed=seed, **kw)


def binary_scenarios():
    rows = [
        (0.4, 0.4, 0.4), (0.4, 0.4, 0.6), (0.35, 0.4, 0.55), (0.42, 0.4, 0.6),
        (0.16, 0.4, 0.4), (0.10, 0.4, 0.4), (0.6, 0.4, 0.55), (0.6, 0.4, 0.6),
    ]
    return [Scenario("binary", h, c, t, 100, 40, 80, label=str(i + 1)) for i, (h, c, t) in enumerate(rows)]


def binary_spec(seed=0, **kw):
    return CalibrationSpec(delta=0.24, effect=0.2, seed=seed, **kw)


def survival_scenarios():
    rows = [(1, 1), (1, 1.65), (0.90, 1.65), (1.11, 1.65), (0.37, 1), (0.30, 1), (3.00, 1.65), (4.06, 1.65)]
    hz = SURVIVAL_HAZARDS
    return [
        Scenario("survival", hz * ph, hz, hz * pt, 50, 25, 50, label=str(i + 1), cuts=SURVIVAL_CUTS)
        for i, (ph, pt) in enumerate(rows)
    ]


def survival_spec(seed=0, **kw):
    return CalibrationSpec(delta=math.e, effect=1.65, seed=seed, **kw)


def map_scenarios():
    rows = [(1, 1, 1), (1, 1, 1.5), (0.9, 1, 1.5), (1.1, 1, 1.5), (0, 1, 1), (-0.2, 1, 1), (1.6, 1, 1.5), (2, 1, 1.5)]
    return [
        Scenario("map-normal", h, (c, 1.0), (t, 1.0), MAP_SIZES, 25, 50, label=str(i + 1), between_sd=0.1)
        for i, (h, c, t) in enumerate(rows)
    ]


def map_spec(seed=0, **kw):
    return CalibrationSpec(delta=1.0, effect=0.5, seed=seed, **kw)


def covariate_scenarios():
    sd_y = math.sqrt(1.1)
    rows = [
        (1, 1, 0.4, 4), (1, 1.5, 0.4, 4), (0.9, 1.5, 0.38, 3.9), (1.1, 1.5, 0.42, 4.1),
        (0, 1, 0.2, 2.5), (-0.5, 1, 0.14, 2), (2, 1.5, 0.6, 5.5), (2.5, 1.5, 0.7, 6),
    ]
    control = {"y": (1.0, sd_y), "x1": 0.4, "x2": (4.0, 1.0)}
    out = []
    for i, (h, t, h1, h2) in enumerate(rows):
        hist = {"y": (h, sd_y), "x1": h1, "x2": (h2, 1.0)}
        treat = {"y": (t, sd_y), "x1": 0.4, "x2": (4.0, 1.0)}
        out.append(Scenario("covariate-normal", hist, control, treat, 50, 25, 50, label=str(i + 1)))
    return out


def covariate_spec(seed=0, **kw):
    return CalibrationSpec(delta=1.0, effect=0.5, seed=seed, **kw)
