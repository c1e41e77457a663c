import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from elastic_prior import inference as inf
from elastic_prior.inference import BetaParams, GammaVector, NormalParams, FLAT
from elastic_prior.types import BinarySummary, DataError, IntervalSufficientStats, NormalSummary

H = BinarySummary(100, 40)


# -- binary ---------------------------------------------------------------------


def test_binary_elastic_prior_examples():
    p = inf.binary_elastic_prior(0.1, 0.1, H, 1.0)
    assert (p.alpha, p.beta) == pytest.approx((40.1, 60.1))
    p = inf.binary_elastic_prior(0.1, 0.1, H, 0.5)
    assert (p.alpha, p.beta) == pytest.approx((20.05, 30.05))
    assert inf.pess(0.5, H.n) == 50
    assert inf.binary_elastic_prior(0.1, 0.1, H, 0.0) == BetaParams(0.1, 0.1)


def test_binary_posterior_examples():
    assert inf.binary_posterior(BetaParams(1, 1), BinarySummary(10, 3)) == BetaParams(4, 8)
    post = inf.binary_posterior(BetaParams(40.1, 60.1), BinarySummary(40, 16))
    assert (post.alpha, post.beta) == pytest.approx((56.1, 84.1))
    assert inf.binary_posterior(BetaParams(0.1, 0.1), None) == BetaParams(0.1, 0.1)


def test_power_prior_examples():
    a, b = inf.elastic_power_prior_binary(0.1, 0.1, H, 1.0), inf.binary_elastic_prior(0.1, 0.1, H, 1.0)
    assert (a.alpha, a.beta) == pytest.approx((b.alpha, b.beta))
    assert inf.elastic_power_prior_binary(0.1, 0.1, H, 0.0) == BetaParams(0.1, 0.1)
    p = inf.elastic_power_prior_binary(0.1, 0.1, H, 0.5)
    assert (p.alpha, p.beta) == pytest.approx((20.1, 30.1))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.data(), st.floats(0.01, 1.0))
def test_beta_mean_preserved_and_variance_inflated(n, data, g):
    h = BinarySummary(n, data.draw(st.integers(0, n)))
    full = inf.binary_elastic_prior(0.1, 0.1, h, 1.0)
    p = inf.binary_elastic_prior(0.1, 0.1, h, g)
    assert p.mean == pytest.approx(full.mean, rel=1e-12)
    # exact ratio (s + 1) / (g s + 1): between 1 and 1/g, tending to 1/g as s grows
    s = full.alpha + full.beta
    ratio = p.var / full.var
    assert ratio == pytest.approx((s + 1) / (g * s + 1), rel=1e-9)
    assert 1 - 1e-12 <= ratio <= 1 / g + 1e-9


def test_prob_superior_beta_examples():
    assert inf.prob_superior_beta(BetaParams(1, 1), BetaParams(1, 1)) == pytest.approx(0.5, abs=1e-8)
    assert inf.prob_superior_beta(BetaParams(2, 1), BetaParams(1, 1)) == pytest.approx(2 / 3, abs=1e-8)
    assert inf.prob_superior_beta(BetaParams(5, 5), BetaParams(5, 5)) == pytest.approx(0.5, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(*(st.floats(0.2, 150) for _ in range(4)))
def test_beta_node_rule_matches_quadrature(at, bt, ac, bc):
    q = inf.prob_superior_beta(BetaParams(at, bt), BetaParams(ac, bc))
    nodes = inf.prob_superior_beta_nodes(inf.treatment_beta_nodes(at, bt), ac, bc)
    assert float(nodes) == pytest.approx(q, abs=2e-3)


@settings(max_examples=60, deadline=None)
@given(*(st.floats(0.5, 80) for _ in range(4)))
def test_beta_superiority_complement(at, bt, ac, bc):
    p = inf.prob_superior_beta(BetaParams(at, bt), BetaParams(ac, bc))
    q = inf.prob_superior_beta(BetaParams(ac, bc), BetaParams(at, bt))
    assert p + q == pytest.approx(1.0, abs=1e-7)


# -- normal ---------------------------------------------------------------------

H_N = NormalSummary.from_raw(np.r_[np.full(25, 0.0), np.full(25, 2.0)])  # mean 1, ML var 1


def test_normal_elastic_prior_examples():
    p = inf.normal_elastic_prior(H_N, 1.0)
    assert (p.mean, p.variance) == pytest.approx((1.0, 0.02))
    p = inf.normal_elastic_prior(H_N, 0.5)
    assert (p.mean, p.variance) == pytest.approx((1.0, 0.04))
    assert inf.pess(0.5, 50) == 25
    assert inf.normal_elastic_prior(H_N, 0.0).is_flat
    assert inf.normal_elastic_prior(H_N, 1e-9).variance > 1e6


def test_normal_posterior_examples():
    c = NormalSummary(25, 1.0, 1.0)
    post = inf.normal_posterior(NormalParams(1.0, 0.02), c, sigma2_plugin=1.0)
    assert (post.mean, post.variance) == pytest.approx((1.0, 1 / 75))
    post = inf.normal_posterior(FLAT, NormalSummary(25, 1.3, 1.0), sigma2_plugin=1.0)
    assert (post.mean, post.variance) == pytest.approx((1.3, 0.04))
    post = inf.normal_posterior(NormalParams(1.0, 0.04), NormalSummary(25, 1.3, 1.0), sigma2_plugin=1.0)
    assert post.mean == pytest.approx(1.15)


def test_prob_superior_normal_examples():
    a, b = NormalParams(1.0, 0.3), NormalParams(1.0, 0.7)
    assert inf.prob_superior_normal(a, b) == 0.5
    c = NormalParams(2.0, 0.7)
    assert inf.prob_superior_normal(NormalParams(3.0, 0.3), c) == pytest.approx(stats.norm.cdf(1.0))
    assert inf.prob_superior_normal(a, c) + inf.prob_superior_normal(c, a) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(-3, 3))
def test_decision_monotone_in_cutoff(c1, c2, shift):
    p = inf.prob_superior_normal(NormalParams(shift, 0.1), NormalParams(0.0, 0.1))
    lo, hi = sorted((c1, c2))
    assert not (p > hi and not p > lo)


# -- joint normal / inverse gamma -------------------------------------------------


def test_ig_conversion_round_trip():
    shape, rate = inf.ig_shape_rate(2.0, 0.5)
    p = inf.NormalInverseGammaParams(0.0, 1.0, shape, rate)
    assert p.ig_mean == pytest.approx(2.0)
    assert p.ig_var == pytest.approx(0.5)


def test_joint_prior_examples():
    h = H_N
    full = inf.joint_normal_elastic_prior(h, 1.0, 1.0, 2.0)
    assert full.ig_mean == pytest.approx(50 / 49)
    half = inf.joint_normal_elastic_prior(h, 1.0, 0.5, 2.0)
    assert half.ig_mean == pytest.approx(full.ig_mean)
    assert half.ig_var == pytest.approx(2 * full.ig_var)
    loc = inf.joint_normal_elastic_prior(h, 0.25, 1.0, 2.0)
    assert loc.count == pytest.approx(12.5)
    with pytest.raises(DataError):
        inf.joint_normal_elastic_prior(NormalSummary.from_raw([0.0, 1.0, 2.0, 3.0]), 1.0, 1.0, 0.0)


def test_joint_posterior_hand_fixture():
    prior = inf.NormalInverseGammaParams(2.0, 10.0, 3.0, 4.0)
    post = inf.joint_normal_posterior(prior, NormalSummary.from_raw([1, 2, 3, 4, 5]))
    # count 15, location (20 + 15)/15, shape 3 + 5/2, rate 4 + (55 + 40)/2 - 35^2/30
    assert post.count == 15
    assert post.location == pytest.approx(7 / 3)
    assert post.ig_shape == pytest.approx(5.5)
    assert post.ig_rate == pytest.approx(4 + 47.5 - 1225 / 30)


def test_joint_posterior_fixed_point_and_raw_needed():
    prior = inf.joint_normal_elastic_prior(H_N, 1.0, 1.0, 2.0)
    post = inf.joint_normal_posterior(prior, NormalSummary.from_raw([0.5, 1.5, 0.0, 2.0]))
    assert post.location == pytest.approx(1.0)
    with pytest.raises(DataError):
        inf.joint_normal_posterior(prior, NormalSummary(4, 1.0, 1.0))


def test_joint_posterior_vague_location_tracks_data():
    prior = inf.joint_normal_elastic_prior(H_N, 1e-9, 1.0, 2.0)
    c = NormalSummary.from_raw([3.0, 4.0, 5.5, 2.5])
    assert inf.joint_normal_posterior(prior, c).location == pytest.approx(c.mean, abs=1e-6)


def test_commensurate_location_prior():
    p = inf.commensurate_location_prior(H_N, 4.0)
    assert p.variance == pytest.approx(0.25 + 1 / 50)
    with pytest.raises(ValueError):
        inf.commensurate_location_prior(H_N, 0.0)


# -- survival -------------------------------------------------------------------


def test_survival_prior_examples():
    s = IntervalSufficientStats((5,), (200.0,))
    assert inf.survival_elastic_prior(0.1, 0.1, s, 1.0) == GammaVector((5.1,), (200.1,))
    half = inf.survival_elastic_prior(0.1, 0.1, s, 0.5)
    assert half.shape == pytest.approx((2.55,)) and half.rate == pytest.approx((100.05,))
    assert half.mean == pytest.approx(5.1 / 200.1)
    s3 = IntervalSufficientStats((5, 2, 7), (200.0, 50.0, 90.0))
    full = inf.survival_elastic_prior(0.1, 0.1, s3, 1.0)
    part = inf.survival_elastic_prior(0.1, 0.1, s3, 0.3)
    np.testing.assert_allclose(part.shape, 0.3 * np.asarray(full.shape))
    np.testing.assert_allclose(part.var, np.asarray(full.var) / 0.3)
    assert inf.survival_elastic_prior(0.1, 0.1, s3, 0.0) == GammaVector((0.1,) * 3, (0.1,) * 3)


def test_hazard_ratio_copy_is_even():
    s = IntervalSufficientStats((6, 9), (300.0, 250.0))
    prior = inf.survival_elastic_prior(0.1, 0.1, s, 0.0)
    r = inf.prob_hr_gt1(prior, s, s, seed=1)
    assert r.probability == pytest.approx(0.5, abs=0.03)
    assert 0.1 <= r.acceptance <= 0.6
    exact = float(inf.prob_hr_gt1_collapsed(np.asarray(prior.shape) + 2 * np.asarray(s.events),
                                            np.asarray(prior.rate) + s.exposure, s.exposure, s.events))
    # the vague control-side Gamma mass tilts beta slightly, hence no exact 1/2
    assert exact == pytest.approx(0.5, abs=0.03)
    assert r.probability == pytest.approx(exact, abs=0.02)


def test_gibbs_agrees_with_collapsed_integral():
    prior = GammaVector((3.1, 4.1), (150.0, 120.0))
    c = IntervalSufficientStats((8, 5), (400.0, 160.0))
    t = IntervalSufficientStats((3, 2), (520.0, 210.0))
    gibbs = inf.prob_hr_gt1(prior, c, t, seed=3).probability
    exact = float(inf.prob_hr_gt1_collapsed(
        np.asarray(prior.shape) + c.events + np.asarray(t.events), np.asarray(prior.rate) + c.exposure,
        t.exposure, t.events))
    assert gibbs == pytest.approx(exact, abs=0.03)


def test_hazard_ratio_needs_events():
    z = IntervalSufficientStats((0, 0), (10.0, 10.0))
    with pytest.raises(DataError):
        inf.prob_hr_gt1(GammaVector((0.1, 0.1), (0.1, 0.1)), z, z)


# -- multiple datasets ------------------------------------------------------------


def test_product_prior_examples():
    pi0 = BetaParams(0.1, 0.1)
    combo = inf.multi_dataset_elastic_prior([BetaParams(5, 7), BetaParams(3, 4)], pi0)
    assert (combo.alpha, combo.beta) == pytest.approx((7.9, 10.9))
    assert inf.multi_dataset_elastic_prior([BetaParams(5, 7)], pi0) == BetaParams(5, 7)
    same = inf.multi_dataset_elastic_prior([pi0, pi0, pi0], pi0)
    assert (same.alpha, same.beta) == pytest.approx((0.1, 0.1))


def test_product_prior_normal_and_errors():
    combo = inf.multi_dataset_elastic_prior([NormalParams(1.0, 0.5), NormalParams(2.0, 0.25)], FLAT)
    assert combo.variance == pytest.approx(1 / 6)
    assert combo.mean == pytest.approx((2 + 8) / 6)
    with pytest.raises(DataError):
        inf.multi_dataset_elastic_prior([BetaParams(0.1, 0.1), BetaParams(0.1, 0.1)], BetaParams(1.0, 1.0))
    with pytest.raises(DataError):
        inf.multi_dataset_elastic_prior([BetaParams(1, 1), NormalParams(0, 1)], BetaParams(1, 1))


# -- MAP ------------------------------------------------------------------------


def test_map_identical_studies_tight_tau_is_pooled():
    d = NormalSummary.from_raw(np.linspace(-1.5, 3.5, 40))
    data = [d] * 4
    r = inf.elastic_map_prior(data, 1.0, 25, tau_scale=1e-4, R=10_000, seed=2)
    pooled_var = d.var / (4 * d.n)
    se = math.sqrt(pooled_var / 10_000)
    assert abs(r.predictive.mean - d.mean) < 3 * se + 1e-3
    assert r.predictive.variance == pytest.approx(pooled_var, rel=0.05)
    assert r.prior == r.predictive
    assert r.ess == pytest.approx(4 * d.n * r.sigma2 / d.var, rel=0.05)


def test_map_elastic_inflation_and_errors():
    rng = np.random.default_rng(0)
    data = [NormalSummary.from_raw(rng.normal(m, 1, 40)) for m in (0.9, 1.0, 1.1)]
    r = inf.elastic_map_prior(data, 0.25, 25, R=2000, seed=1)
    assert r.prior.variance == pytest.approx(4 * r.predictive.variance)
    assert r.prior.mean == r.predictive.mean
    assert inf.elastic_map_prior(data, 0.0, 25, R=2000, seed=1).prior.is_flat
    with pytest.raises(DataError):
        inf.elastic_map_prior(data[:1], 1.0, 25)


def test_pess_examples():
    assert inf.pess(1.0, 100) == 100
    assert inf.pess(0.0, 100) == 0
    assert inf.pess(0.489, 100) == pytest.approx(48.9)
    with pytest.raises(ValueError):
        inf.pess(1.5, 10)
