"""Vectorized endpoint models used by calibration and simulation.

A model wraps one fixed historical dataset plus the initial-prior
hyperparameters. It knows how to

* draw batches of current control / treatment arms from generator params,
* compute the congruence statistic of each control arm against D_h,
* turn any array of borrowing fractions g into Pr(treatment superior).

Generator params are endpoint specific: a response rate (binary), a
``(mean, sd)`` pair (normal), a hazard vector (survival) or a dict
(normal outcome with covariates).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import stats

from . import congruence as cg
from .inference import (
    MAPResult,
    elastic_map_prior,
    prob_hr_gt1_collapsed,
    prob_superior_beta_nodes,
    treatment_beta_nodes,
)
from .types import (
    BinarySummary,
    DataError,
    NormalSummary,
    SurvivalData,
    interval_stats_arrays,
    survival_sufficient_stats,
)

CLAMP = (0.001, 0.999)


@dataclass
class TrialBatch:
    """Replicated trials: congruence values plus whatever the model needs later."""

    T: np.ndarray
    degenerate: np.ndarray
    data: Dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return self.T.size

    @staticmethod
    def concat(parts: Sequence["TrialBatch"]) -> "TrialBatch":
        keys = parts[0].data.keys()
        return TrialBatch(
            np.concatenate([p.T for p in parts]),
            np.concatenate([p.degenerate for p in parts]),
            {k: np.concatenate([p.data[k] for p in parts]) for k in keys},
        )


class EndpointModel:
    kind = "base"
    n_h: float

    def fitted_params(self):
        raise NotImplementedError

    def shifted_params(self, direction: int, delta: float):
        raise NotImplementedError

    def treatment_params(self, control_params, effect: float):
        raise NotImplementedError

    def control_congruence(self, params, n_c: int, size: int, rng) -> tuple:
        raise NotImplementedError

    def simulate_trials(self, control_params, treatment_params, n_c, n_t, size, rng) -> TrialBatch:
        raise NotImplementedError

    def prob_superior(self, batch: TrialBatch, g) -> np.ndarray:
        raise NotImplementedError

    def pess(self, g):
        return np.asarray(g) * self.n_h


# -- binary -------------------------------------------------------------------


def clamp_rate(p: float) -> float:
    lo, hi = CLAMP
    if p < lo or p > hi:
        warnings.warn(f"Bernoulli parameter {p:.4g} clamped into [{lo}, {hi}]", RuntimeWarning, stacklevel=3)
    return min(max(p, lo), hi)


class BinaryModel(EndpointModel):
    kind = "binary"

    def __init__(self, historical: BinarySummary, alpha0: float = 0.1, beta0: float = 0.1):
        self.historical = historical
        self.alpha0 = alpha0
        self.beta0 = beta0
        self.n_h = historical.n

    @staticmethod
    def reference_historical(p: float, n: int) -> BinarySummary:
        return BinarySummary(n, int(round(n * p)))

    @staticmethod
    def sample_historical(p: float, n: int, rng) -> BinarySummary:
        return BinarySummary(n, int(rng.binomial(n, p)))

    def fitted_params(self):
        return self.historical.rate

    def shifted_params(self, direction, delta):
        return clamp_rate(self.fitted_params() + direction * delta)

    def treatment_params(self, control_params, effect):
        return clamp_rate(control_params + effect)

    def _T(self, x_c, n_c):
        h = self.historical
        return cg.chi_square_batch(h.responders, h.n, x_c, n_c)

    def control_congruence(self, params, n_c, size, rng):
        return self._T(rng.binomial(n_c, params, size), n_c)

    def simulate_trials(self, control_params, treatment_params, n_c, n_t, size, rng):
        x_c = rng.binomial(n_c, control_params, size)
        x_t = rng.binomial(n_t, treatment_params, size)
        T, deg = self._T(x_c, n_c)
        nodes = treatment_beta_nodes(self.alpha0 + x_t, self.beta0 + n_t - x_t)
        data = {"x_c": x_c, "n_c": np.full(size, n_c), "x_t": x_t, "n_t": np.full(size, n_t), "nodes": nodes}
        return TrialBatch(T, deg, data)

    def control_posterior(self, batch, g):
        g = np.broadcast_to(np.asarray(g, dtype=float), batch.T.shape)
        h = self.historical
        a0 = np.where(g > 0, (self.alpha0 + h.responders) * g, self.alpha0)
        b0 = np.where(g > 0, (self.beta0 + h.n - h.responders) * g, self.beta0)
        x_c, n_c = batch.data["x_c"], batch.data["n_c"]
        return a0 + x_c, b0 + n_c - x_c

    def prob_superior(self, batch, g):
        a, b = self.control_posterior(batch, g)
        return prob_superior_beta_nodes(batch.data["nodes"], a, b)


# -- normal -------------------------------------------------------------------


def reference_normal_sample(mean: float, sd: float, n: int) -> np.ndarray:
    """Deterministic sample with exactly the given mean and SD (divisor n-1)."""
    z = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    z = (z - z.mean()) / z.std(ddof=1)
    return mean + sd * z


def _normal_arms(params, n, size, rng):
    mean, sd = params
    y = rng.normal(mean, sd, (size, n))
    return y.mean(1), y.var(1, ddof=1)


class NormalModel(EndpointModel):
    """Normal endpoint; prior N(mean_h, ml_var_h / (n_h g)), plug-in ML variances."""

    kind = "normal"

    def __init__(self, historical: NormalSummary):
        if historical.n < 2:
            raise DataError("normal historical data needs n >= 2")
        self.historical = historical
        self.n_h = historical.n

    @staticmethod
    def reference_historical(params, n):
        return NormalSummary.from_raw(reference_normal_sample(params[0], params[1], n))

    @staticmethod
    def sample_historical(params, n, rng):
        return NormalSummary.from_raw(rng.normal(params[0], params[1], n))

    def fitted_params(self):
        return (self.historical.mean, self.historical.sd)

    def shifted_params(self, direction, delta):
        mean, sd = self.fitted_params()
        return (mean + direction * delta, sd)

    def treatment_params(self, control_params, effect):
        return (control_params[0] + effect, control_params[1])

    def _T(self, mean_c, var_c, n_c):
        h = self.historical
        return cg.t_batch(h.mean, h.var, h.n, mean_c, var_c, n_c)

    def control_congruence(self, params, n_c, size, rng):
        return self._T(*_normal_arms(params, n_c, size, rng), n_c)

    def simulate_trials(self, control_params, treatment_params, n_c, n_t, size, rng):
        m_c, v_c = _normal_arms(control_params, n_c, size, rng)
        m_t, v_t = _normal_arms(treatment_params, n_t, size, rng)
        T, deg = self._T(m_c, v_c, n_c)
        return TrialBatch(
            T,
            deg,
            {
                "mean_c": m_c,
                "s2_c": v_c * (n_c - 1) / n_c,
                "n_c": np.full(size, n_c),
                "mean_t": m_t,
                "s2_t": v_t * (n_t - 1) / n_t,
                "n_t": np.full(size, n_t),
            },
        )

    def prior_moments(self):
        """(mean, variance at g = 1) of the undiscounted historical posterior."""
        h = self.historical
        return h.mean, h.ml_var / h.n

    def prob_superior(self, batch, g):
        g = np.asarray(g, dtype=float)
        m0, v0 = self.prior_moments()
        d = batch.data
        prior_prec = g / v0
        data_prec = d["n_c"] / d["s2_c"]
        prec = prior_prec + data_prec
        mean_c = (prior_prec * m0 + data_prec * d["mean_c"]) / prec
        var = 1 / prec + d["s2_t"] / d["n_t"]
        return stats.norm.cdf((d["mean_t"] - mean_c) / np.sqrt(var))


class MAPNormalModel(NormalModel):
    """Normal endpoint borrowing from several studies through an elastic MAP prior.

    Congruence is the posterior-predictive statistic of the observed control
    mean against the MAP predictive draws.
    """

    kind = "map-normal"

    def __init__(self, studies: Sequence[NormalSummary], n_c: int, tau_scale: float = 0.5, R: int = 10_000, seed: int = 0):
        self.studies = tuple(studies)
        self.n_c_ref = n_c
        self.map: MAPResult = elastic_map_prior(self.studies, 1.0, n_c, tau_scale=tau_scale, R=R, seed=seed)
        self.sorted_draws = np.sort(self.map.predictive_means)
        self.n_h = self.map.ess
        self.historical = None

    @staticmethod
    def reference_historical(params, sizes, between_sd=0.1, sd=1.0):
        K = len(sizes)
        offsets = stats.norm.ppf((np.arange(1, K + 1) - 0.5) / K) * between_sd
        return [NormalSummary.from_raw(reference_normal_sample(params + o, sd, n)) for o, n in zip(offsets, sizes)]

    @staticmethod
    def sample_historical(params, sizes, rng, between_sd=0.1, sd=1.0):
        thetas = params + between_sd * rng.standard_normal(len(sizes))
        return [NormalSummary.from_raw(rng.normal(t, sd, n)) for t, n in zip(thetas, sizes)]

    def fitted_params(self):
        return (self.map.predictive.mean, math.sqrt(self.map.sigma2))

    def _T(self, mean_c, var_c, n_c):
        T = cg.posterior_predictive_batch(self.sorted_draws, mean_c)
        return np.maximum(T, 0.0), np.zeros(T.shape, dtype=bool)

    def prior_moments(self):
        return self.map.predictive.mean, self.map.predictive.variance


# -- normal outcome with covariates -------------------------------------------


class CovariateNormalModel(NormalModel):
    """Normal outcome plus one binary and one continuous covariate.

    With ``use_covariates`` the congruence is the (weighted) Fisher
    combination of the outcome t, binary chi-square and covariate t p-values;
    otherwise it is the outcome t statistic alone. The prior always concerns
    the outcome mean only.

    Generator params: dict with keys ``y`` (mean, sd), ``x1`` (rate) and
    ``x2`` (mean, sd).
    """

    kind = "covariate-normal"

    def __init__(self, historical: dict, use_covariates: bool = True, covariate_deltas=(0.2, 1.5), weights=None):
        self.y: NormalSummary = historical["y"]
        self.x1: BinarySummary = historical["x1"]
        self.x2: NormalSummary = historical["x2"]
        super().__init__(self.y)
        self.use_covariates = use_covariates
        self.covariate_deltas = tuple(covariate_deltas)
        self.weights = weights

    @staticmethod
    def reference_historical(params, n):
        return {
            "y": NormalSummary.from_raw(reference_normal_sample(*params["y"], n)),
            "x1": BinarySummary(n, int(round(n * params["x1"]))),
            "x2": NormalSummary.from_raw(reference_normal_sample(*params["x2"], n)),
        }

    @staticmethod
    def sample_historical(params, n, rng):
        return {
            "y": NormalSummary.from_raw(rng.normal(*params["y"], n)),
            "x1": BinarySummary(n, int(rng.binomial(n, params["x1"]))),
            "x2": NormalSummary.from_raw(rng.normal(*params["x2"], n)),
        }

    def fitted_params(self):
        return {"y": (self.y.mean, self.y.sd), "x1": self.x1.rate, "x2": (self.x2.mean, self.x2.sd)}

    def shifted_params(self, direction, delta):
        p = self.fitted_params()
        d1, d2 = self.covariate_deltas if self.use_covariates else (0.0, 0.0)
        return {
            "y": (p["y"][0] + direction * delta, p["y"][1]),
            "x1": clamp_rate(p["x1"] + direction * d1),
            "x2": (p["x2"][0] + direction * d2, p["x2"][1]),
        }

    def treatment_params(self, control_params, effect):
        out = dict(control_params)
        out["y"] = (control_params["y"][0] + effect, control_params["y"][1])
        return out

    def _congruence(self, params, n_c, size, rng):
        m_c, v_c = _normal_arms(params["y"], n_c, size, rng)
        T_y, deg = cg.t_batch(self.y.mean, self.y.var, self.y.n, m_c, v_c, n_c)
        # covariates are always drawn so both variants share random numbers
        x1 = rng.binomial(n_c, params["x1"], size)
        m2, v2 = _normal_arms(params["x2"], n_c, size, rng)
        if not self.use_covariates:
            return T_y, deg, m_c, v_c
        df = self.y.n + n_c - 2
        T1, _ = cg.chi_square_batch(self.x1.responders, self.x1.n, x1, n_c)
        T2, _ = cg.t_batch(self.x2.mean, self.x2.var, self.x2.n, m2, v2, n_c)
        p = np.stack((cg.t_pvalue(T_y, df), cg.chi_square_pvalue(T1), cg.t_pvalue(T2, df)), -1)
        T, clamped = cg.fisher_combined_batch(p, self.weights)
        return T, np.zeros(T.shape, dtype=bool), m_c, v_c

    def control_congruence(self, params, n_c, size, rng):
        T, deg, _, _ = self._congruence(params, n_c, size, rng)
        return T, deg

    def simulate_trials(self, control_params, treatment_params, n_c, n_t, size, rng):
        T, deg, m_c, v_c = self._congruence(control_params, n_c, size, rng)
        m_t, v_t = _normal_arms(treatment_params["y"], n_t, size, rng)
        return TrialBatch(
            T,
            deg,
            {
                "mean_c": m_c,
                "s2_c": v_c * (n_c - 1) / n_c,
                "n_c": np.full(size, n_c),
                "mean_t": m_t,
                "s2_t": v_t * (n_t - 1) / n_t,
                "n_t": np.full(size, n_t),
            },
        )


# -- survival -----------------------------------------------------------------


def piecewise_exponential_times(hazards, cuts, u):
    """Invert the piecewise-exponential survivor function at uniforms ``u``.

    ``cuts`` are the interval ends d_1..d_J; hazards apply on [d_{j-1}, d_j)
    and the last hazard extends past d_J when d_J is infinite.
    """
    hazards = np.asarray(hazards, dtype=float)
    cuts = np.asarray(cuts, dtype=float)
    lower = np.concatenate(([0.0], cuts[:-1]))
    width = cuts - lower
    H_end = np.cumsum(hazards * width)
    H_start = np.concatenate(([0.0], H_end[:-1]))
    target = -np.log1p(-np.asarray(u, dtype=float))
    j = np.searchsorted(H_end, target, side="right")
    j = np.minimum(j, hazards.size - 1)
    t = lower[j] + (target - H_start[j]) / hazards[j]
    return t


def censor(times, horizon):
    if math.isinf(horizon):
        return times, np.ones(times.shape, dtype=int)
    return np.minimum(times, horizon), (times <= horizon).astype(int)


class SurvivalModel(EndpointModel):
    """Piecewise-exponential PH model with Gamma elastic priors per interval.

    The congruence statistic is the absolute logrank statistic; shifts are
    multiplicative on the hazards. Superiority is Pr(exp(beta) > 1).
    """

    kind = "survival"

    def __init__(self, historical: SurvivalData, kappa=0.1, upsilon=0.1, beta_prior_sd=10.0):
        self.historical = historical
        self.cuts = np.asarray(historical.partition)
        self.horizon = float(self.cuts[-1])
        self.stats = survival_sufficient_stats(historical)
        J = self.cuts.size
        self.kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (J,)).copy()
        self.upsilon = np.broadcast_to(np.asarray(upsilon, dtype=float), (J,)).copy()
        self.beta_prior_var = beta_prior_sd**2
        self.n_h = historical.n
        self._h_times = np.asarray(historical.times)
        self._h_events = np.asarray(historical.events)

    @staticmethod
    def reference_historical(hazards, n, cuts):
        u = (np.arange(1, n + 1) - 0.5) / n
        t, e = censor(piecewise_exponential_times(hazards, cuts, u), cuts[-1])
        return SurvivalData(tuple(t), tuple(e), tuple(cuts))

    @staticmethod
    def sample_historical(hazards, n, cuts, rng):
        t, e = censor(piecewise_exponential_times(hazards, cuts, rng.random(n)), cuts[-1])
        return SurvivalData(tuple(t), tuple(e), tuple(cuts))

    def fitted_params(self):
        return self.stats.hazard_mle()

    def shifted_params(self, direction, delta):
        return self.fitted_params() * float(delta) ** direction

    def treatment_params(self, control_params, effect):
        return np.asarray(control_params) * effect

    def _sample(self, hazards, n, size, rng):
        t = piecewise_exponential_times(hazards, self.cuts, rng.random((size, n)))
        return censor(t, self.horizon)

    def _T(self, t_c, e_c):
        size = t_c.shape[0]
        times = np.concatenate((np.broadcast_to(self._h_times, (size, self.n_h)), t_c), 1)
        events = np.concatenate((np.broadcast_to(self._h_events, (size, self.n_h)), e_c), 1)
        group = np.concatenate((np.ones(self.n_h), np.zeros(t_c.shape[1])))
        return cg.logrank_batch(times, events, group)

    def control_congruence(self, params, n_c, size, rng):
        return self._T(*self._sample(params, n_c, size, rng))

    def simulate_trials(self, control_params, treatment_params, n_c, n_t, size, rng):
        t_c, e_c = self._sample(control_params, n_c, size, rng)
        t_t, e_t = self._sample(treatment_params, n_t, size, rng)
        T, deg = self._T(t_c, e_c)
        d_c, x_c = interval_stats_arrays(t_c, e_c, self.cuts)
        d_t, x_t = interval_stats_arrays(t_t, e_t, self.cuts)
        return TrialBatch(T, deg, {"d_c": d_c, "x_c": x_c, "d_t": d_t, "x_t": x_t})

    def prior_params(self, g):
        g = np.asarray(g, dtype=float)[..., None]
        ev = np.asarray(self.stats.events, dtype=float)
        ex = np.asarray(self.stats.exposure, dtype=float)
        shape = np.where(g > 0, (self.kappa + ev) * g, self.kappa)
        rate = np.where(g > 0, (self.upsilon + ex) * g, self.upsilon)
        return shape, rate

    def prob_superior(self, batch, g):
        shape0, rate0 = self.prior_params(np.broadcast_to(np.asarray(g, dtype=float), batch.T.shape))
        d = batch.data
        return prob_hr_gt1_collapsed(
            shape0 + d["d_c"] + d["d_t"], rate0 + d["x_c"], d["x_t"], d["d_t"], self.beta_prior_var
        )
