"""Scenario generation, single-trial analysis and operating characteristics.

Two ways to treat the historical data across replicates:

``reference`` (default)
    One deterministic representative D_h per scenario whose summaries equal
    the generator parameters. The elastic function is solved once from that
    D_h at the design's (q0, q1); replicates vary D_c and D_t only.
``fresh``
    A new D_h per replicate, with the elastic function re-solved from each
    replicate's D_h. Much slower; replicates loop in Python.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import congruence as cg
from .calibration import (
    CalibrationResult,
    borrowing,
    calibrate_cutoff,
    grid_search,
    simulate_batch,
    simulate_T_samples,
    solve_at,
)
from .elastic import eval_elastic
from .inference import (
    FLAT,
    BetaParams,
    NormalParams,
    binary_elastic_prior,
    binary_posterior,
    normal_elastic_prior,
    normal_posterior,
    prob_hr_gt1,
    prob_hr_gt1_collapsed,
    prob_superior_beta,
    prob_superior_normal,
    survival_elastic_prior,
)
from .models import (
    BinaryModel,
    CovariateNormalModel,
    EndpointModel,
    MAPNormalModel,
    NormalModel,
    SurvivalModel,
    censor,
    piecewise_exponential_times,
)
from .rng import substream
from .types import (
    BinarySummary,
    CalibrationInfeasible,
    CalibrationSpec,
    ElasticFunction,
    NormalSummary,
    SurvivalData,
    survival_sufficient_stats,
)

KINDS = ("binary", "normal", "survival", "map-normal", "covariate-normal")


@dataclass(frozen=True)
class Scenario:
    """Generator parameters for one simulated setting.

    ``historical``, ``control`` and ``treatment`` are endpoint generator
    params: a rate (binary), ``(mean, sd)`` (normal), a hazard vector
    (survival), a dict ``{"y", "x1", "x2"}`` (covariate-normal). For
    map-normal ``historical`` is the hierarchical mean theta_h and ``n_h``
    the tuple of study sizes.
    """

    kind: str
    historical: object
    control: object
    treatment: object
    n_h: object
    n_c: int
    n_t: int
    label: str = ""
    cuts: Optional[tuple] = None
    between_sd: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown endpoint kind {self.kind!r}")
        if self.n_c < 1 or self.n_t < 1:
            raise ValueError("arm sizes must be >= 1")
        sizes = self.n_h if isinstance(self.n_h, (tuple, list)) else (self.n_h,)
        if any(n < 1 for n in sizes):
            raise ValueError("historical sizes must be >= 1")
        if self.kind == "binary":
            for p in (self.historical, self.control, self.treatment):
                if not 0 <= p <= 1:
                    raise ValueError("binary generator rates must lie in [0, 1]")
        if self.kind == "survival":
            if self.cuts is None:
                raise ValueError("survival scenarios need cut points")
            for hz in (self.historical, self.control, self.treatment):
                if np.any(np.asarray(hz) <= 0) or len(hz) != len(self.cuts):
                    raise ValueError("hazards must be positive, one per interval")


@dataclass(frozen=True)
class OCReport:
    rejection_rate: float
    mc_standard_error: float
    mean_pess: float
    cutoff: float
    n_sims: int
    seed: int
    metadata: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class TrialDesign:
    """A calibrated design ready to analyse one trial.

    The model carries D_h and the initial-prior hyperparameters;
    ``fallback_T`` is the congruence value used for degenerate data.
    ``elastic=None`` means no borrowing.
    """

    model: EndpointModel
    elastic: Optional[ElasticFunction]
    cutoff: float
    fallback_T: float = 1.0

    def __post_init__(self):
        if not 0 < self.cutoff < 1:
            raise ValueError("cutoff must lie in (0, 1)")

    @property
    def kind(self) -> str:
        return self.model.kind


@dataclass(frozen=True)
class DesignRecipe:
    """How to rebuild a design for any D_h: elastic form, chosen quantiles, cutoff."""

    kind: str
    elastic_kind: str
    spec: CalibrationSpec
    n_c: int
    n_t: int
    cutoff: float
    q0: Optional[float] = None
    q1: Optional[float] = None
    options: dict = field(default_factory=dict)


# -- data generation ----------------------------------------------------------


def historical_reference(s: Scenario):
    if s.kind == "binary":
        return BinaryModel.reference_historical(s.historical, s.n_h)
    if s.kind == "normal":
        return NormalModel.reference_historical(s.historical, s.n_h)
    if s.kind == "survival":
        return SurvivalModel.reference_historical(s.historical, s.n_h, np.asarray(s.cuts, dtype=float))
    if s.kind == "map-normal":
        return MAPNormalModel.reference_historical(s.historical, s.n_h, s.between_sd, s.control[1])
    return CovariateNormalModel.reference_historical(s.historical, s.n_h)


def generate_arm(s: Scenario, arm: str, seed: int):
    """Simulate one arm ("historical", "control" or "treatment") of a scenario."""
    rng = substream(seed, "arm", arm)
    if arm == "historical":
        if s.kind == "binary":
            return BinaryModel.sample_historical(s.historical, s.n_h, rng)
        if s.kind == "normal":
            return NormalModel.sample_historical(s.historical, s.n_h, rng)
        if s.kind == "survival":
            return SurvivalModel.sample_historical(s.historical, s.n_h, np.asarray(s.cuts, dtype=float), rng)
        if s.kind == "map-normal":
            return MAPNormalModel.sample_historical(s.historical, s.n_h, rng, s.between_sd, s.control[1])
        return CovariateNormalModel.sample_historical(s.historical, s.n_h, rng)
    if arm not in ("control", "treatment"):
        raise ValueError(f"unknown arm {arm!r}")
    params = s.control if arm == "control" else s.treatment
    n = s.n_c if arm == "control" else s.n_t
    if s.kind == "binary":
        return BinarySummary(n, int(rng.binomial(n, params)))
    if s.kind in ("normal", "map-normal"):
        return NormalSummary.from_raw(rng.normal(params[0], params[1], n))
    if s.kind == "survival":
        cuts = np.asarray(s.cuts, dtype=float)
        t, e = censor(piecewise_exponential_times(params, cuts, rng.random(n)), cuts[-1])
        return SurvivalData(tuple(t), tuple(e), tuple(cuts))
    if arm == "treatment":
        return {"y": NormalSummary.from_raw(rng.normal(*params["y"], n))}
    return CovariateNormalModel.sample_historical(params, n, rng)


def make_model(kind: str, historical, n_c: int, options: Optional[dict] = None) -> EndpointModel:
    o = dict(options or {})
    if kind == "binary":
        return BinaryModel(historical, o.get("alpha0", 0.1), o.get("beta0", 0.1))
    if kind == "normal":
        return NormalModel(historical)
    if kind == "survival":
        return SurvivalModel(historical, o.get("kappa", 0.1), o.get("upsilon", 0.1), o.get("beta_prior_sd", 10.0))
    if kind == "map-normal":
        return MAPNormalModel(historical, n_c, o.get("tau_scale", 0.3), o.get("map_R", 10_000), o.get("map_seed", 0))
    if kind == "covariate-normal":
        return CovariateNormalModel(
            historical, o.get("use_covariates", True), tuple(o.get("covariate_deltas", (0.2, 1.5))), o.get("weights")
        )
    raise ValueError(f"unknown endpoint kind {kind!r}")


# -- calibration of a design --------------------------------------------------


def calibrate_design(
    scenario: Scenario, spec: CalibrationSpec, elastic_kind: str = "logistic", options=None, threads=None
):
    """Calibrate on the scenario's reference D_h (normally the congruent null).

    Returns ``(recipe, result)``; ``result`` is ``None`` for no borrowing.
    """
    model = make_model(scenario.kind, historical_reference(scenario), scenario.n_c, options)
    if elastic_kind == "none":
        C = calibrate_cutoff(model, None, scenario.n_c, scenario.n_t, spec.n_cutoff, spec.seed, spec.alpha, threads=threads)
        recipe = DesignRecipe(scenario.kind, "none", spec, scenario.n_c, scenario.n_t, C, options=dict(options or {}))
        return recipe, None
    result: CalibrationResult = grid_search(spec, model, scenario.n_c, scenario.n_t, elastic_kind, threads)
    recipe = DesignRecipe(
        scenario.kind, elastic_kind, spec, scenario.n_c, scenario.n_t, result.cutoff, result.q0, result.q1, dict(options or {})
    )
    return recipe, result


def design_for(recipe: DesignRecipe, historical, threads=None, seed=None) -> TrialDesign:
    """Rebuild the recipe's elastic function from the T distributions of a given D_h."""
    model = make_model(recipe.kind, historical, recipe.n_c, recipe.options)
    if recipe.elastic_kind == "none":
        return TrialDesign(model, None, recipe.cutoff)
    spec = recipe.spec
    samples = simulate_T_samples(model, recipe.n_c, spec.delta, spec.R, spec.seed if seed is None else seed, threads)
    elastic = solve_at(samples, recipe.elastic_kind, recipe.q0, recipe.q1, spec.C1, spec.C2, spec.q1_tail)
    return TrialDesign(model, elastic, recipe.cutoff, samples.fallback_T)


# -- single trial -------------------------------------------------------------


@dataclass(frozen=True)
class TrialOutcome:
    T: float
    g: float
    pess: float
    probability: float
    reject: bool
    degenerate: bool = False


def _g(design: TrialDesign, cv: cg.CongruenceValue) -> float:
    if design.elastic is None:
        return 0.0
    T = design.fallback_T if cv.degenerate else cv.T
    return float(eval_elastic(design.elastic, T))


def run_trial(design: TrialDesign, control, treatment, sampler: str = "collapsed", seed: int = 0) -> TrialOutcome:
    """Congruence -> g -> elastic prior -> posterior -> Pr(superior) -> decision.

    Scalar path through the inference primitives. Survival uses the
    collapsed integral by default or the Gibbs sampler with ``sampler="gibbs"``.
    """
    m = design.model
    kind = m.kind
    if kind == "binary":
        cv = cg.chi_square_congruence(m.historical, control)
        g = _g(design, cv)
        post_c = binary_posterior(binary_elastic_prior(m.alpha0, m.beta0, m.historical, g), control)
        post_t = binary_posterior(BetaParams(m.alpha0, m.beta0), treatment)
        prob = prob_superior_beta(post_t, post_c)
    elif kind in ("normal", "map-normal", "covariate-normal"):
        if kind == "normal":
            cv = cg.t_congruence(m.historical, control)
        elif kind == "map-normal":
            cv = cg.posterior_predictive_congruence(m.sorted_draws, control.mean)
        else:
            cv = _covariate_congruence(m, control)
            control, treatment = control["y"], treatment["y"]
        g = _g(design, cv)
        if g == 0:
            prior = FLAT
        elif kind == "map-normal":
            prior = NormalParams(m.map.predictive.mean, m.map.predictive.variance / g)
        else:
            prior = normal_elastic_prior(m.historical, g)
        prob = prob_superior_normal(normal_posterior(FLAT, treatment), normal_posterior(prior, control))
    elif kind == "survival":
        cv = cg.logrank_congruence(m.historical, control)
        g = _g(design, cv)
        prior = survival_elastic_prior(m.kappa, m.upsilon, m.stats, g)
        sc, st = survival_sufficient_stats(control), survival_sufficient_stats(treatment)
        if sampler == "gibbs":
            prob = prob_hr_gt1(prior, sc, st, seed=seed, beta_prior_sd=math.sqrt(m.beta_prior_var)).probability
        else:
            shape = np.asarray(prior.shape) + np.asarray(sc.events) + np.asarray(st.events)
            prob = float(
                prob_hr_gt1_collapsed(
                    shape, np.asarray(prior.rate) + np.asarray(sc.exposure), np.asarray(st.exposure, dtype=float),
                    np.asarray(st.events, dtype=float), m.beta_prior_var,
                )
            )
    else:
        raise ValueError(f"unknown endpoint kind {kind!r}")
    pess = float(m.pess(g))
    return TrialOutcome(cv.T, g, pess, float(prob), bool(prob > design.cutoff), cv.degenerate)


def _covariate_congruence(m: CovariateNormalModel, c: dict) -> cg.CongruenceValue:
    t_y = cg.t_congruence(m.y, c["y"])
    if not m.use_covariates:
        return t_y
    df = m.y.n + c["y"].n - 2
    p = [
        float(cg.t_pvalue(t_y.T, df)),
        float(cg.chi_square_pvalue(cg.chi_square_congruence(m.x1, c["x1"]).T)),
        float(cg.t_pvalue(cg.t_congruence(m.x2, c["x2"]).T, df)),
    ]
    return cg.fisher_combined_congruence(p, m.weights)


# -- operating characteristics ------------------------------------------------


def _report(reject, pess, cutoff, n_sims, seed, meta) -> OCReport:
    p = float(np.mean(reject))
    return OCReport(p, math.sqrt(p * (1 - p) / n_sims), float(np.mean(pess)), cutoff, n_sims, seed, meta)


def operating_characteristics(
    recipe: DesignRecipe,
    scenario: Scenario,
    n_sims: int = 1000,
    seed: int = 0,
    mode: str = "reference",
    threads=None,
    fresh_R: int = 1000,
    keep_records: bool = False,
) -> OCReport:
    """Rejection rate, Monte Carlo SE and mean PESS of a design under a scenario."""
    if n_sims < 100:
        raise ValueError("n_sims must be >= 100")
    if scenario.kind != recipe.kind:
        raise ValueError("scenario and design endpoint kinds differ")
    meta = {"label": scenario.label, "mode": mode, "elastic_kind": recipe.elastic_kind}
    if mode == "reference":
        design = design_for(recipe, historical_reference(scenario), threads)
        m = design.model
        batch = simulate_batch(
            m, scenario.control, scenario.treatment, scenario.n_c, scenario.n_t, n_sims, seed, ("oc",), threads
        )
        g = np.zeros(len(batch)) if design.elastic is None else borrowing(design.elastic, batch, design.fallback_T)
        probs = m.prob_superior(batch, g)
        reject = probs > recipe.cutoff
        pess = m.pess(g)
        if design.elastic is not None:
            meta["elastic"] = {k: float(v) for k, v in vars(design.elastic).items()}
        if keep_records:
            meta["records"] = {"T": batch.T, "g": g, "probability": probs, "reject": reject}
        return _report(reject, pess, recipe.cutoff, n_sims, seed, meta)
    if mode != "fresh":
        raise ValueError(f"unknown historical-data mode {mode!r}")
    spec = replace(recipe.spec, R=max(100, fresh_R))
    fresh = replace(recipe, spec=spec)
    reject = np.empty(n_sims, dtype=bool)
    pess = np.empty(n_sims)
    for i in range(n_sims):
        rng = substream(seed, "fresh", i)
        h = generate_arm(scenario, "historical", int(rng.integers(2**32)))
        try:
            design = design_for(fresh, h, seed=int(rng.integers(2**32)))
        except CalibrationInfeasible:
            design = TrialDesign(make_model(recipe.kind, h, recipe.n_c, recipe.options), None, recipe.cutoff)
        batch = design.model.simulate_trials(scenario.control, scenario.treatment, scenario.n_c, scenario.n_t, 1, rng)
        g = np.zeros(1) if design.elastic is None else borrowing(design.elastic, batch, design.fallback_T)
        reject[i] = design.model.prob_superior(batch, g)[0] > recipe.cutoff
        pess[i] = float(design.model.pess(g[0]))
    return _report(reject, pess, recipe.cutoff, n_sims, seed, meta)
