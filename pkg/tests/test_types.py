import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastic_prior.types import (
    BinarySummary,
    CalibrationSpec,
    DataError,
    LogisticElastic,
    NormalSummary,
    StepElastic,
    SurvivalData,
    survival_sufficient_stats,
)

CUTS = (16.0, 28.0, 40.0)


@pytest.mark.parametrize(
    "t, e, events, exposure",
    [
        (10, 1, (1, 0, 0), (10, 0, 0)),
        (20, 0, (0, 0, 0), (16, 4, 0)),
        (40, 1, (0, 0, 1), (16, 12, 12)),
    ],
)
def test_interval_stats_single_subject(t, e, events, exposure):
    s = survival_sufficient_stats(SurvivalData((t,), (e,), CUTS))
    assert s.events == events
    np.testing.assert_allclose(s.exposure, exposure)


def test_time_beyond_last_cut_rejected():
    with pytest.raises(DataError):
        SurvivalData((41.0,), (1,), CUTS)


def test_open_last_interval():
    s = survival_sufficient_stats(SurvivalData((100.0,), (1,), (16.0, 28.0, math.inf)))
    assert s.events == (0, 0, 1)
    np.testing.assert_allclose(s.exposure, (16, 12, 72))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 40), st.integers(0, 1)), min_size=1, max_size=30))
def test_total_exposure_is_total_time(rows):
    t, e = zip(*rows)
    s = survival_sufficient_stats(SurvivalData(t, e, CUTS))
    assert math.isclose(sum(s.exposure), sum(t), rel_tol=1e-12, abs_tol=1e-9)
    assert sum(s.events) == sum(e)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_normal_summary_resummarize_idempotent(y):
    a = NormalSummary.from_raw(y)
    b = NormalSummary.from_raw(a.raw)
    assert (a.n, a.mean, a.sd) == (b.n, b.mean, b.sd)


def test_normal_summary_raw_mismatch():
    with pytest.raises(DataError):
        NormalSummary(3, 5.0, 1.0, raw=(1.0, 2.0, 3.0))


def test_ml_variance_divisor():
    s = NormalSummary.from_raw([1.0, 2.0, 3.0, 4.0])
    assert math.isclose(s.ml_var, np.var([1, 2, 3, 4]))
    assert math.isclose(s.var, np.var([1, 2, 3, 4], ddof=1))


def test_binary_summary_bounds():
    with pytest.raises(DataError):
        BinarySummary(10, 11)
    with pytest.raises(DataError):
        BinarySummary(0, 0)
    assert BinarySummary.from_raw([1, 0, 1, 1]) == BinarySummary(4, 3)


def test_elastic_records_validate():
    with pytest.raises(ValueError):
        LogisticElastic(0.0, -1.0)
    with pytest.raises(ValueError):
        StepElastic(0.0)


def test_calibration_spec_validation():
    CalibrationSpec(delta=1, effect=0.5)
    with pytest.raises(ValueError):
        CalibrationSpec(delta=1, effect=0.5, C1=0.5, C2=0.5)
    with pytest.raises(ValueError):
        CalibrationSpec(delta=1, effect=0.5, q0_grid=(0.5, 0.3))
    with pytest.raises(ValueError):
        CalibrationSpec(delta=1, effect=0.5, R=50)
    with pytest.raises(ValueError):
        CalibrationSpec(delta=1, effect=0.5, q1_tail="middle")
