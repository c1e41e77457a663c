"""Conjugate elastic priors, posteriors and superiority probabilities.

All priors here inflate the variance of the historical-data posterior by
1/g while keeping its mean. ``g = 0`` falls back to the initial vague prior
(binary, survival) or an improper flat prior (normal, variance ``inf``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from .rng import substream
from .types import (
    BinarySummary,
    DataError,
    IntervalSufficientStats,
    NormalSummary,
)


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DataError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def var(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1))


@dataclass(frozen=True)
class NormalParams:
    """Normal prior/posterior; ``variance = inf`` encodes the flat prior."""

    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DataError(f"variance must be > 0, got {self.variance}")

    @property
    def is_flat(self) -> bool:
        return math.isinf(self.variance)


FLAT = NormalParams(0.0, math.inf)


def ig_shape_rate(mean: float, var: float):
    """Inverse-gamma (shape, rate) from its mean and variance."""
    shape = mean * mean / var + 2
    return shape, mean * (shape - 1)


@dataclass(frozen=True)
class NormalInverseGammaParams:
    """theta | sigma^2 ~ N(location, sigma^2 / count); sigma^2 ~ IG(ig_shape, ig_rate)."""

    location: float
    count: float
    ig_shape: float
    ig_rate: float
    m: float = 0.0

    def __post_init__(self):
        if not (self.count > 0 and self.ig_shape > 0 and self.ig_rate > 0):
            raise DataError("count, ig_shape and ig_rate must all be positive")

    @property
    def ig_mean(self) -> float:
        return self.ig_rate / (self.ig_shape - 1) if self.ig_shape > 1 else math.inf

    @property
    def ig_var(self) -> float:
        if self.ig_shape <= 2:
            return math.inf
        return self.ig_rate**2 / ((self.ig_shape - 1) ** 2 * (self.ig_shape - 2))

    def theta_marginal(self):
        """Student-t marginal of theta as a frozen scipy distribution."""
        scale = math.sqrt(self.ig_rate / (self.ig_shape * self.count))
        return stats.t(df=2 * self.ig_shape, loc=self.location, scale=scale)


@dataclass(frozen=True)
class GammaVector:
    shape: tuple
    rate: tuple

    def __post_init__(self):
        shape = tuple(float(v) for v in self.shape)
        rate = tuple(float(v) for v in self.rate)
        if len(shape) != len(rate) or not shape:
            raise DataError("shape and rate need equal, nonzero length")
        if min(shape) <= 0 or min(rate) <= 0:
            raise DataError("Gamma parameters must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "rate", rate)

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.shape) / np.asarray(self.rate)

    @property
    def var(self) -> np.ndarray:
        return np.asarray(self.shape) / np.asarray(self.rate) ** 2


def _check_g(g: float):
    if not 0 <= g <= 1:
        raise ValueError(f"g must lie in [0, 1], got {g}")


def pess(g: float, n_h: float) -> float:
    """Prior effective sample size of an elastic prior."""
    _check_g(g)
    return g * n_h


# -- binary -------------------------------------------------------------------


def binary_elastic_prior(alpha0: float, beta0: float, h: BinarySummary, g: float) -> BetaParams:
    _check_g(g)
    if g == 0:
        return BetaParams(alpha0, beta0)
    return BetaParams((alpha0 + h.responders) * g, (beta0 + h.n - h.responders) * g)


def binary_posterior(prior: BetaParams, c: Optional[BinarySummary]) -> BetaParams:
    if c is None:
        return prior
    return BetaParams(prior.alpha + c.responders, prior.beta + c.n - c.responders)


def elastic_power_prior_binary(alpha0: float, beta0: float, h: BinarySummary, g: float) -> BetaParams:
    """Power-prior variant: only the historical counts are discounted."""
    _check_g(g)
    return BetaParams(g * h.responders + alpha0, g * (h.n - h.responders) + beta0)


_GL_U, _GL_W = np.polynomial.legendre.leggauss(64)
_GL_U = (_GL_U + 1) / 2
_GL_W = _GL_W / 2


def _beta_logit_density(t, a, b):
    """Density of logit(X) for X ~ Beta(a, b); smooth and bounded for all a, b > 0."""
    log_x = -np.logaddexp(0.0, -t)
    log_1mx = -np.logaddexp(0.0, t)
    return np.exp(a * log_x + b * log_1mx - special.betaln(a, b))


def _beta_cdf_logit(t, a, b):
    """Beta(a, b) CDF at x = expit(t), via the upper tail when x is near 1."""
    t = np.asarray(t, dtype=float)
    lower = special.betainc(a, b, special.expit(t))
    upper = 1.0 - special.betainc(b, a, special.expit(-t))
    return np.where(t < 0, lower, upper)


def prob_superior_beta(post_t: BetaParams, post_c: BetaParams) -> float:
    """Pr(X > Y) for independent X ~ post_t, Y ~ post_c by adaptive quadrature.

    Integrates f_t * F_c on the logit scale, where the treatment density has
    no endpoint singularities and decays exponentially in both tails.
    """
    a, b, c, d = post_t.alpha, post_t.beta, post_c.alpha, post_c.beta

    def integrand(t):
        return _beta_logit_density(t, a, b) * _beta_cdf_logit(t, c, d)

    pts = []
    for p, q in ((a, b), (c, d)):
        centre, sd = math.log(p / q), math.sqrt(1 / p + 1 / q)
        pts.extend(centre + sd * k for k in (-8, -3, -1, 0, 1, 3, 8))
    pts = np.unique(pts)
    total = integrate.quad(integrand, -np.inf, pts[0], epsabs=1e-12, limit=200)[0]
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
    total += integrate.quad(integrand, pts[-1], np.inf, epsabs=1e-12, limit=200)[0]
    return min(max(total, 0.0), 1.0)


def treatment_beta_nodes(alpha_t, beta_t):
    """Quantiles of the treatment posteriors at the fixed quadrature nodes.

    Shape ``(..., 64)``; reusable across any number of control posteriors.
    """
    a = np.asarray(alpha_t, dtype=float)[..., None]
    b = np.asarray(beta_t, dtype=float)[..., None]
    return special.betaincinv(a, b, _GL_U)


def prob_superior_beta_nodes(t_nodes, alpha_c, beta_c):
    """Vectorized Pr(X > Y) = E_X[F_c(X)] using precomputed treatment nodes."""
    a = np.asarray(alpha_c, dtype=float)[..., None]
    b = np.asarray(beta_c, dtype=float)[..., None]
    return special.betainc(a, b, t_nodes) @ _GL_W


# -- normal -------------------------------------------------------------------


def prob_superior_normal(post_t: NormalParams, post_c: NormalParams) -> float:
    return float(stats.norm.cdf((post_t.mean - post_c.mean) / math.sqrt(post_t.variance + post_c.variance)))


def normal_elastic_prior(h: NormalSummary, g: float) -> NormalParams:
    """N(mean_h, sigma_h^2 / (n_h g)) with sigma_h^2 the ML variance."""
    _check_g(g)
    if g == 0:
        return FLAT
    return NormalParams(h.mean, h.ml_var / (h.n * g))


def normal_posterior(prior: NormalParams, c: NormalSummary, sigma2_plugin: Optional[float] = None) -> NormalParams:
    s2 = c.ml_var if sigma2_plugin is None else sigma2_plugin
    if not s2 > 0:
        raise DataError("plug-in variance must be > 0")
    data_prec = c.n / s2
    if prior.is_flat:
        return NormalParams(c.mean, 1 / data_prec)
    prior_prec = 1 / prior.variance
    prec = prior_prec + data_prec
    return NormalParams((prior_prec * prior.mean + data_prec * c.mean) / prec, 1 / prec)


def joint_normal_elastic_prior(h: NormalSummary, g1: float, g2: float, m: float) -> NormalInverseGammaParams:
    """Normal-inverse-gamma elastic prior with separate location/scale discounts."""
    if not (0 < g1 <= 1 and 0 < g2 <= 1):
        raise ValueError("g1 and g2 must lie in (0, 1]")
    k = (h.n - 7) / 2 + m
    if k <= 0:
        raise DataError(f"need n_h > 7 - 2m for a finite IG variance (n_h={h.n}, m={m})")
    s2 = h.ml_var
    mu = h.n * s2 / (h.n - 5 + 2 * m)
    eps2 = mu * mu / k
    shape, rate = ig_shape_rate(mu, eps2 / g2)
    return NormalInverseGammaParams(h.mean, h.n * g1, shape, rate, m)


def joint_normal_posterior(prior: NormalInverseGammaParams, c: NormalSummary) -> NormalInverseGammaParams:
    if c.raw is None:
        raise DataError("joint posterior needs the raw current-arm sample")
    y = np.asarray(c.raw, dtype=float)
    k0 = prior.count
    count = k0 + c.n
    loc = (k0 * prior.location + c.n * c.mean) / count
    shape = prior.ig_shape + c.n / 2
    rate = (
        prior.ig_rate
        + (np.sum(y * y) + k0 * prior.location**2) / 2
        - (k0 * prior.location + c.n * c.mean) ** 2 / (2 * count)
    )
    return NormalInverseGammaParams(loc, count, shape, float(rate), prior.m)


def commensurate_location_prior(h: NormalSummary, g: float) -> NormalParams:
    """Location-only elastic commensurate prior, N(mean_h, 1/g + sigma_h^2/n_h).

    Here g is a precision on (0, inf) rather than a borrowing fraction.
    """
    if not g > 0:
        raise ValueError("commensurate precision must be > 0")
    return NormalParams(h.mean, 1 / g + h.ml_var / h.n)


# -- survival -----------------------------------------------------------------


def survival_elastic_prior(kappa, upsilon, h_stats: IntervalSufficientStats, g: float) -> GammaVector:
    _check_g(g)
    J = h_stats.n_intervals
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (J,))
    upsilon = np.broadcast_to(np.asarray(upsilon, dtype=float), (J,))
    if g == 0:
        return GammaVector(tuple(kappa), tuple(upsilon))
    ev = np.asarray(h_stats.events, dtype=float)
    ex = np.asarray(h_stats.exposure, dtype=float)
    return GammaVector(tuple((kappa + ev) * g), tuple((upsilon + ex) * g))


_GL_X, _GL_XW = np.polynomial.legendre.leggauss(48)


def _beta_log_density(beta, shape, rate_c, exp_t, events_t, prior_var):
    """Log marginal posterior of beta (hazards integrated out), up to a constant.

    ``beta`` has shape (..., M); the other arrays (..., J) broadcast against it.
    """
    b = beta[..., None]
    return (
        beta * events_t.sum(-1, keepdims=True)
        - (shape[..., None, :] * np.log(rate_c[..., None, :] + np.exp(b) * exp_t[..., None, :])).sum(-1)
        - beta * beta / (2 * prior_var)
    )


def prob_hr_gt1_collapsed(shape, rate_c, exp_t, events_t, prior_var=100.0):
    """Pr(exp(beta) > 1) with the piecewise hazards integrated out analytically.

    ``shape`` is kappa' + control events + treatment events per interval,
    ``rate_c`` is upsilon' + control exposure, ``exp_t``/``events_t`` the
    treatment exposure and events. Leading axes are batch axes. The 1-d
    posterior of beta is log-concave; it is integrated by Gauss-Legendre on
    both sides of 0 over a +-12 SD window around the mode.
    """
    shape, rate_c, exp_t, events_t = (np.asarray(v, dtype=float) for v in (shape, rate_c, exp_t, events_t))
    shape, rate_c, exp_t, events_t = np.broadcast_arrays(shape, rate_c, exp_t, events_t)
    dt = events_t.sum(-1)
    beta = np.zeros(shape.shape[:-1])
    for _ in range(60):
        e = np.exp(beta)[..., None]
        frac = e * exp_t / (rate_c + e * exp_t)
        grad = dt - (shape * frac).sum(-1) - beta / prior_var
        hess = -(shape * frac * (1 - frac)).sum(-1) - 1 / prior_var
        step = grad / hess
        beta = beta - np.clip(step, -2, 2)
        if np.all(np.abs(step) < 1e-10):
            break
    sd = 1 / np.sqrt(-hess)
    lo = beta - 12 * sd
    hi = beta + 12 * sd
    cut = np.clip(0.0, lo, hi)
    x = (_GL_X + 1) / 2

    def piece(a, b):
        nodes = a[..., None] + (b - a)[..., None] * x
        logp = _beta_log_density(nodes, shape, rate_c, exp_t, events_t, prior_var)
        return nodes, logp, (b - a)[..., None] / 2 * _GL_XW

    _, lp_lo, w_lo = piece(lo, cut)
    _, lp_hi, w_hi = piece(cut, hi)
    ref = np.maximum(lp_lo.max(-1), lp_hi.max(-1))[..., None]
    mass_lo = (np.exp(lp_lo - ref) * w_lo).sum(-1)
    mass_hi = (np.exp(lp_hi - ref) * w_hi).sum(-1)
    return mass_hi / (mass_lo + mass_hi)


@dataclass(frozen=True)
class SamplerResult:
    probability: float
    acceptance: float
    n_kept: int
    warning: str = ""
    beta_draws: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def prob_hr_gt1(
    prior: GammaVector,
    control: IntervalSufficientStats,
    treatment: IntervalSufficientStats,
    seed: int = 0,
    burn_in: int = 2000,
    n_keep: int = 8000,
    beta_prior_sd: float = 10.0,
    keep_draws: bool = False,
) -> SamplerResult:
    """Pr(exp(beta) > 1 | data) under the piecewise-exponential PH model.

    Gibbs for the interval hazards (conjugate Gamma given beta) alternated
    with a random-walk Metropolis step for beta. The proposal scale adapts
    during burn-in only.
    """
    d_c = np.asarray(control.events, dtype=float)
    e_c = np.asarray(control.exposure, dtype=float)
    d_t = np.asarray(treatment.events, dtype=float)
    e_t = np.asarray(treatment.exposure, dtype=float)
    kappa = np.asarray(prior.shape)
    ups = np.asarray(prior.rate)
    if not (d_c.size == d_t.size == kappa.size):
        raise DataError("interval counts differ between prior and data")
    if d_c.sum() + d_t.sum() < 1:
        raise DataError("need at least one event in the pooled arms")
    rng = substream(seed, "hr-sampler")
    shape_post = kappa + d_c + d_t
    Dt = d_t.sum()
    prior_var = beta_prior_sd**2

    def loglik(b, theta):
        return b * Dt - math.exp(b) * float(theta @ e_t) - b * b / (2 * prior_var)

    beta = 0.0
    step = 0.5
    accepted = 0
    window_acc = 0
    draws = np.empty(n_keep)
    for it in range(burn_in + n_keep):
        theta = rng.gamma(shape_post, 1.0 / (ups + e_c + math.exp(beta) * e_t))
        prop = beta + step * rng.standard_normal()
        if math.log(rng.random()) < loglik(prop, theta) - loglik(beta, theta):
            beta = prop
            if it >= burn_in:
                accepted += 1
            else:
                window_acc += 1
        if it < burn_in and (it + 1) % 100 == 0:
            rate = window_acc / 100
            step *= math.exp(rate - 0.44)
            window_acc = 0
        if it >= burn_in:
            draws[it - burn_in] = beta
    acc = accepted / n_keep
    warning = ""
    if not 0.1 <= acc <= 0.6:
        warning = f"Metropolis acceptance {acc:.3f} outside [0.1, 0.6]"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return SamplerResult(float(np.mean(draws > 0)), acc, n_keep, warning, draws if keep_draws else None)


# -- multiple historical datasets -------------------------------------------


def multi_dataset_elastic_prior(priors: Sequence, pi0):
    """Product of per-dataset elastic priors divided by pi0^(K-1).

    Supports Beta, Normal (flat ``pi0`` allowed) and Gamma-vector families.
    """
    K = len(priors)
    if K == 0:
        raise DataError("need at least one prior")
    if K == 1:
        return priors[0]
    first = priors[0]
    if any(type(p) is not type(first) for p in priors) or type(pi0) is not type(first):
        raise DataError("all priors must share the conjugate family of pi0")
    try:
        if isinstance(first, BetaParams):
            return BetaParams(
                sum(p.alpha for p in priors) - (K - 1) * pi0.alpha,
                sum(p.beta for p in priors) - (K - 1) * pi0.beta,
            )
        if isinstance(first, GammaVector):
            shape = sum(np.asarray(p.shape) for p in priors) - (K - 1) * np.asarray(pi0.shape)
            rate = sum(np.asarray(p.rate) for p in priors) - (K - 1) * np.asarray(pi0.rate)
            return GammaVector(tuple(shape), tuple(rate))
        if isinstance(first, NormalParams):
            pi0_prec = 0.0 if pi0.is_flat else 1 / pi0.variance
            pi0_wm = 0.0 if pi0.is_flat else pi0.mean / pi0.variance
            precs = [0.0 if p.is_flat else 1 / p.variance for p in priors]
            wms = [0.0 if p.is_flat else p.mean / p.variance for p in priors]
            prec = sum(precs) - (K - 1) * pi0_prec
            if prec == 0 and all(p.is_flat for p in priors):
                return FLAT
            if not prec > 0:
                raise DataError("combined precision is not positive")
            return NormalParams((sum(wms) - (K - 1) * pi0_wm) / prec, 1 / prec)
    except DataError as exc:
        raise DataError(f"combined prior is improper: {exc}") from exc
    raise DataError(f"unsupported prior family {type(first).__name__}")


# -- elastic MAP --------------------------------------------------------------


@dataclass(frozen=True)
class MAPResult:
    """Moment-matched MAP predictive and its elastic inflation."""

    predictive: NormalParams
    prior: NormalParams
    sigma2: float
    ess: float
    rhat: float
    warning: str
    theta_draws: np.ndarray = field(repr=False, compare=False)
    predictive_means: np.ndarray = field(repr=False, compare=False)


def _log_tau_posterior(log_tau, y, se2, tau_scale):
    tau2 = math.exp(2 * log_tau)
    w = 1 / (se2 + tau2)
    mu = float(w @ y / w.sum())
    return (
        0.5 * float(np.log(w).sum())
        - 0.5 * math.log(w.sum())
        - 0.5 * float(w @ (y - mu) ** 2)
        - tau2 / (2 * tau_scale**2)
        + log_tau
    )


def _map_chain(y, se2, tau_scale, n_iter, rng):
    log_tau = math.log(tau_scale / 2)
    step = 1.0
    taus = np.empty(n_iter)
    acc = 0
    lp = _log_tau_posterior(log_tau, y, se2, tau_scale)
    for i in range(n_iter):
        prop = log_tau + step * rng.standard_normal()
        lp_prop = _log_tau_posterior(prop, y, se2, tau_scale)
        if math.log(rng.random()) < lp_prop - lp:
            log_tau, lp = prop, lp_prop
            acc += 1
        taus[i] = math.exp(log_tau)
    return taus, acc / n_iter


def _split_rhat(chains):
    chains = np.asarray(chains)
    half = chains.shape[1] // 2
    parts = np.concatenate((chains[:, :half], chains[:, half : 2 * half]))
    n = parts.shape[1]
    W = parts.var(axis=1, ddof=1).mean()
    B = n * parts.mean(axis=1).var(ddof=1)
    if W <= 0:
        return 1.0
    var_hat = (n - 1) / n * W + B / n
    return float(math.sqrt(var_hat / W))


def elastic_map_prior(
    datasets: Sequence[NormalSummary],
    g: float,
    n_c: int,
    tau_scale: float = 0.5,
    R: int = 10_000,
    seed: int = 0,
    burn_in: int = 1000,
    n_chains: int = 2,
) -> MAPResult:
    """Elastic meta-analytic-predictive prior for a normal endpoint.

    Hierarchical model y_k ~ N(theta_k, s_k^2/n_k), theta_k ~ N(theta_h, tau^2)
    with a flat prior on theta_h and a half-normal(tau_scale) prior on tau.
    tau is sampled by random-walk Metropolis on its collapsed posterior,
    then theta_h | tau and theta_new | theta_h, tau are drawn exactly.
    ``predictive_means`` are simulated current-arm means of size n_c, the
    input to :func:`posterior_predictive_congruence`.
    """
    _check_g(g)
    if len(datasets) < 2:
        raise DataError("elastic MAP needs at least two historical datasets")
    y = np.array([d.mean for d in datasets])
    n = np.array([d.n for d in datasets], dtype=float)
    v = np.array([d.var for d in datasets])
    se2 = v / n
    sigma2 = float(((n - 1) * v).sum() / (n - 1).sum())
    rng = substream(seed, "map")
    per_chain = -(-R // n_chains)
    chains, accs = [], []
    for _ in range(n_chains):
        taus, acc = _map_chain(y, se2, tau_scale, burn_in + per_chain, rng)
        chains.append(taus[burn_in:])
        accs.append(acc)
    rhat = _split_rhat(chains)
    tau = np.concatenate(chains)[:R]
    w = 1 / (se2[None, :] + tau[:, None] ** 2)
    mu = (w * y).sum(1) / w.sum(1)
    theta_h = mu + rng.standard_normal(R) / np.sqrt(w.sum(1))
    theta_new = theta_h + tau * rng.standard_normal(R)
    pred_means = theta_new + math.sqrt(sigma2 / n_c) * rng.standard_normal(R)
    warning = ""
    if rhat > 1.05:
        warning = f"split R-hat {rhat:.3f} exceeds 1.05"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    predictive = NormalParams(float(theta_new.mean()), float(theta_new.var(ddof=1)))
    prior = FLAT if g == 0 else NormalParams(predictive.mean, predictive.variance / g)
    return MAPResult(
        predictive=predictive,
        prior=prior,
        sigma2=sigma2,
        ess=sigma2 / predictive.variance,
        rhat=rhat,
        warning=warning,
        theta_draws=theta_new,
        predictive_means=pred_means,
    )
