import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from elastic_prior import calibration as cal
from elastic_prior.calibration import TSamples
from elastic_prior.elastic import eval_elastic
from elastic_prior.models import BinaryModel, NormalModel
from elastic_prior.rng import substream
from elastic_prior.types import CalibrationInfeasible, CalibrationSpec, LogisticElastic, StepElastic


def normal_model(n_h=50):
    return NormalModel(NormalModel.reference_historical((1.0, 1.0), n_h))


def test_binary_congruent_T_matches_enumeration():
    # D_h stays fixed and D_c ~ Bin(n_c, rate_h), so E[T] is a finite sum
    h = BinaryModel.reference_historical(0.4, 100)
    T = cal.simulate_T(BinaryModel(h), 40, 0, 0.24, 10_000, seed=1)
    assert T.size == 10_000 and np.all(T >= 0)
    x = np.arange(41)
    vals = np.array([
        stats.chi2_contingency([[40, 60], [k, 40 - k]], correction=False)[0] for k in x
    ])
    pmf = stats.binom.pmf(x, 40, 0.4)
    mean = float(pmf @ vals)
    sd = math.sqrt(float(pmf @ vals**2) - mean**2)
    assert T.mean() == pytest.approx(mean, abs=3 * sd / math.sqrt(T.size))
    # roughly chi-square(1) scaled by n_h / (n_h + n_c)
    assert mean == pytest.approx(100 / 140, abs=0.05)


def test_normal_congruent_T_matches_conditional_law():
    n_h, n_c, R = 50, 25, 10_000
    h = NormalModel.reference_historical((1.0, 2.0), n_h)
    T = cal.simulate_T(NormalModel(h), n_c, 0, 1.0, R, seed=3)
    # independent construction: mean gap and sample variance drawn directly
    rng = np.random.default_rng(12345)
    s_h = h.sd
    diff = s_h * rng.standard_normal(R) / math.sqrt(n_c)
    s2_c = s_h**2 * rng.chisquare(n_c - 1, R) / (n_c - 1)
    s2_p = ((n_h - 1) * h.var + (n_c - 1) * s2_c) / (n_h + n_c - 2)
    oracle = np.abs(diff) / np.sqrt(s2_p * (1 / n_h + 1 / n_c))
    assert stats.ks_2samp(T, oracle).statistic < 0.03


def test_normal_T_over_fresh_generators_is_absolute_t():
    # with D_h and D_c both drawn from the same law, the pooled t law applies
    from elastic_prior.congruence import t_batch

    n_h, n_c, R = 50, 25, 10_000
    rng = substream(0, "test-histories")
    yh = rng.normal(1.0, 1.0, (R, n_h))
    yc = rng.normal(1.0, 1.0, (R, n_c))
    T, _ = t_batch(yh.mean(1), yh.var(1, ddof=1), n_h, yc.mean(1), yc.var(1, ddof=1), n_c)
    abs_t = stats.t(n_h + n_c - 2)
    assert stats.kstest(T, lambda x: 2 * abs_t.cdf(x) - 1).statistic < 0.03


def test_simulate_T_deterministic_and_validated():
    m = normal_model()
    a = cal.simulate_T(m, 25, 1, 1.0, 500, seed=4)
    np.testing.assert_array_equal(a, cal.simulate_T(m, 25, 1, 1.0, 500, seed=4))
    assert not np.array_equal(a, cal.simulate_T(m, 25, -1, 1.0, 500, seed=4))
    with pytest.raises(ValueError):
        cal.simulate_T(m, 25, 0, 1.0, 99, seed=0)
    with pytest.raises(ValueError):
        cal.simulate_T(m, 25, 2, 1.0, 500, seed=0)


def test_binary_shift_clamps_with_warning():
    m = BinaryModel(BinaryModel.reference_historical(0.1, 100))
    with pytest.warns(RuntimeWarning, match="clamped"):
        assert m.shifted_params(-1, 0.24) == 0.001


def test_survival_shift_is_multiplicative():
    from elastic_prior.settings import SURVIVAL_CUTS, SURVIVAL_HAZARDS
    from elastic_prior.models import SurvivalModel

    m = SurvivalModel(SurvivalModel.reference_historical(SURVIVAL_HAZARDS, 50, np.asarray(SURVIVAL_CUTS)))
    base = m.fitted_params()
    np.testing.assert_allclose(m.shifted_params(1, math.e), base * math.e)
    np.testing.assert_allclose(m.shifted_params(-1, math.e), base / math.e)


# -- quantiles and feasibility ------------------------------------------------------

def _samples(seed, shift):
    rng = np.random.default_rng(seed)
    return TSamples(np.abs(rng.normal(0, 1, 2000)), np.abs(rng.normal(shift, 1, 2000)), np.abs(rng.normal(-shift, 1, 2000)))


def test_closed_form_at_unit_e_quantiles():
    s = TSamples(np.array([1.0] * 200), np.array([math.e] * 200), np.array([math.e] * 200))
    f = cal.solve_at(s, "logistic", 0.5, 0.5)
    assert (f.a, f.b) == pytest.approx((-4.595, 9.190), abs=1e-3)
    assert cal.solve_at(s, "step", 0.5, None) == StepElastic(1.0)


def test_q1_conventions():
    s = _samples(0, 3.0)
    t0, up = s.quantiles(0.5, 0.8, "upper")
    _, low = s.quantiles(0.5, 0.8, "lower")
    expect_up = min(np.quantile(s.incongruent_plus, 0.2), np.quantile(s.incongruent_minus, 0.2))
    expect_low = min(np.quantile(s.incongruent_plus, 0.8), np.quantile(s.incongruent_minus, 0.8))
    assert up == pytest.approx(expect_up) and low == pytest.approx(expect_low)
    assert t0 == pytest.approx(np.quantile(s.congruent, 0.5))


def _feasible(s, q0, q1, tail):
    try:
        cal.solve_at(s, "logistic", q0, q1, q1_tail=tail)
        return True
    except CalibrationInfeasible:
        return False


qs = st.sampled_from([0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 4.0), qs, qs, qs)
def test_feasibility_monotone(seed, shift, q0, q1, q1b):
    s = _samples(seed, shift)
    lo, hi = sorted((q1, q1b))
    # literal reading: a larger q1 only moves T_q1 up
    if _feasible(s, q0, lo, "lower"):
        assert _feasible(s, q0, hi, "lower")
    # upper-tail reading: mirrored, a larger q1 moves T_q1 down
    if _feasible(s, q0, hi, "upper"):
        assert _feasible(s, q0, lo, "upper")
    # in q0 both readings shrink the feasible set as q0 grows
    for tail in ("lower", "upper"):
        if _feasible(s, max(q0, 0.5), q1, tail):
            assert _feasible(s, min(q0, 0.5), q1, tail)


def test_calibrate_logistic_marks_infeasible_points():
    spec = CalibrationSpec(delta=1.0, effect=0.5, R=2000, q0_grid=(0.5, 0.9), q1_grid=(0.3, 0.9))
    table, samples = cal.calibrate_logistic(spec, normal_model(), 25)
    assert set(table) == {(0.5, 0.3), (0.5, 0.9), (0.9, 0.3), (0.9, 0.9)}
    for (q0, q1), f in table.items():
        t0, t1 = samples.quantiles(q0, q1)
        if f is None:
            assert t0 >= t1
        else:
            assert eval_elastic(f, t0) == pytest.approx(0.99, abs=1e-12)
            assert eval_elastic(f, t1) == pytest.approx(0.01, abs=1e-12)


def test_calibrated_function_hits_C1_on_fresh_samples():
    m = normal_model()
    spec = CalibrationSpec(delta=1.0, effect=0.5, R=10_000)
    s = cal.simulate_T_samples(m, 25, 1.0, 10_000, seed=0)
    f = cal.solve_at(s, "logistic", 0.7, 0.9)
    fresh = cal.simulate_T(m, 25, 0, 1.0, 10_000, seed=99)
    frac = float(np.mean(eval_elastic(f, fresh) >= 0.99))
    assert frac == pytest.approx(0.7, abs=3 * math.sqrt(0.21 / 10_000) * math.sqrt(2))


# -- cutoff and utility ---------------------------------------------------------------


def test_np_cutoff_near_095_for_large_n():
    m = NormalModel(NormalModel.reference_historical((0.0, 1.0), 400))
    C = cal.calibrate_cutoff(m, None, 400, 400, R=10_000, seed=2)
    assert C == pytest.approx(0.95, abs=0.01)


def test_full_borrowing_cutoff_not_above_np():
    m = normal_model()
    full = LogisticElastic(-50.0, 1e-9)  # g == 1 to machine precision
    C_np = cal.calibrate_cutoff(m, None, 25, 50, R=10_000, seed=1)
    C_full = cal.calibrate_cutoff(m, full, 25, 50, R=10_000, seed=1)
    assert C_full <= C_np
    assert C_np == cal.calibrate_cutoff(m, None, 25, 50, R=10_000, seed=1)


def test_cutoff_quantile_rule():
    p = np.arange(1, 101) / 100
    C = cal.cutoff_from(p, 0.05)
    assert np.mean(p > C) == pytest.approx(0.05)


def test_utility_examples():
    assert cal.utility(0.934, 0.077) == pytest.approx(0.857)
    assert cal.utility(0.9, 0.12) == pytest.approx(0.74)
    assert cal.utility(0.9, 0.1) == pytest.approx(0.8)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 3), st.floats(0, 3), st.floats(0.01, 0.99))
def test_utility_formula(rho, psi, w1, w2, eta):
    expect = rho - w1 * psi - (w2 * (psi - eta) if psi > eta else 0.0)
    assert cal.utility(rho, psi, w1, w2, eta) == pytest.approx(expect, abs=1e-12)


# -- grid search ------------------------------------------------------------------


SMALL = dict(R=2000, n_search=1000, n_cutoff=2000)


def test_grid_search_argmax_and_diagnostics():
    spec = CalibrationSpec(delta=1.0, effect=0.5, **SMALL)
    res = cal.grid_search(spec, normal_model(), 25, 50)
    grid = res.diagnostics["grid"]
    assert len(grid) == 49
    feasible = [r for r in grid if r["feasible"]]
    assert res.diagnostics["n_feasible"] == len(feasible) > 0
    best = max(r["utility"] for r in feasible)
    assert res.diagnostics["search_utility"] == best
    winner = next(r for r in feasible if r["utility"] == best)
    assert (winner["q0"], winner["q1"]) == (res.q0, res.q1)
    assert 0 < res.cutoff < 1
    assert res.utility == pytest.approx(cal.utility(res.rho, res.psi, spec.w1, spec.w2, spec.eta), abs=0)
    assert res.psi == max(res.diagnostics["psi_plus"], res.diagnostics["psi_minus"])


def test_grid_search_tie_break(monkeypatch):
    monkeypatch.setattr(cal, "_evaluate", lambda *a, **k: (0.95, 0.8, 0.05, (0.05, 0.05)))
    spec = CalibrationSpec(delta=1.0, effect=0.5, **SMALL)
    res = cal.grid_search(spec, normal_model(), 25, 50)
    first = next(r for r in res.diagnostics["grid"] if r["feasible"])
    assert (res.q0, res.q1) == (first["q0"], first["q1"])


def test_grid_search_step_searches_q0_only():
    spec = CalibrationSpec(delta=1.0, effect=0.5, **SMALL)
    res = cal.grid_search(spec, normal_model(), 25, 50, kind="step")
    assert len(res.diagnostics["grid"]) == 7 and res.q1 is None
    s = cal.simulate_T_samples(normal_model(), 25, 1.0, spec.R, spec.seed)
    assert res.elastic == StepElastic(float(np.quantile(s.congruent, res.q0)))


def test_grid_search_all_infeasible():
    spec = CalibrationSpec(delta=1e-6, effect=0.5, q0_grid=(0.7, 0.8, 0.9), q1_grid=(0.5, 0.6, 0.7), **SMALL)
    with pytest.raises(CalibrationInfeasible, match="infeasible"):
        cal.grid_search(spec, normal_model(), 25, 50)


def test_grid_search_deterministic_across_threads():
    spec = CalibrationSpec(delta=1.0, effect=0.5, seed=5, **SMALL)
    a = cal.grid_search(spec, normal_model(), 25, 50, threads=1)
    b = cal.grid_search(spec, normal_model(), 25, 50, threads=4)
    assert a == b and a.diagnostics == b.diagnostics
