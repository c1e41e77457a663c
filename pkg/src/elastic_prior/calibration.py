"""Monte Carlo calibration of elastic functions and decision cutoffs.

All random work goes through :func:`rng.run_blocks`, so results depend on
the master seed only, never on the thread count. Trial batches are shared
across grid points (common random numbers), which makes the utility
comparison between grid points far less noisy than independent draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .elastic import eval_elastic, solve_logistic, solve_step
from .models import EndpointModel, TrialBatch
from .rng import run_blocks
from .types import CalibrationInfeasible, CalibrationSpec, ElasticFunction

_TAG = {0: "congruent", 1: "plus", -1: "minus"}


@dataclass(frozen=True)
class TSamples:
    congruent: np.ndarray
    incongruent_plus: np.ndarray
    incongruent_minus: np.ndarray

    @property
    def fallback_T(self) -> float:
        """T used for degenerate replicates: the congruent-case median."""
        return float(np.median(self.congruent))

    def quantiles(self, q0: float, q1: Optional[float] = None, q1_tail: str = "upper") -> Tuple[float, Optional[float]]:
        """(T_q0, T_q1) with T_q1 the more conservative of the two shifts."""
        t0 = float(np.quantile(self.congruent, q0))
        if q1 is None:
            return t0, None
        if q1_tail == "upper":
            q1 = 1 - q1
        t1 = min(float(np.quantile(self.incongruent_plus, q1)), float(np.quantile(self.incongruent_minus, q1)))
        return t0, t1


@dataclass(frozen=True)
class CalibrationResult:
    elastic: ElasticFunction
    kind: str
    q0: float
    q1: Optional[float]
    cutoff: float
    rho: float
    psi: float
    utility: float
    fallback_T: float
    diagnostics: dict = field(default_factory=dict, compare=False)


def simulate_T(model: EndpointModel, n_c: int, direction: int, delta: float, R: int, seed: int, threads=None) -> np.ndarray:
    """R congruence values of fresh control arms against the model's fixed D_h.

    ``direction`` is 0 (generator at the fitted historical parameters),
    +1 or -1 (shifted by delta; multiplicative for survival).
    """
    if R < 100:
        raise ValueError("R must be >= 100")
    if direction not in (0, 1, -1):
        raise ValueError("direction must be 0, +1 or -1")
    params = model.fitted_params() if direction == 0 else model.shifted_params(direction, delta)
    parts = run_blocks(lambda rng, size: model.control_congruence(params, n_c, size, rng)[0], R, seed, "T", _TAG[direction], threads=threads)
    return np.concatenate(parts)


def simulate_T_samples(model, n_c, delta, R, seed, threads=None) -> TSamples:
    return TSamples(*(simulate_T(model, n_c, d, delta, R, seed, threads) for d in (0, 1, -1)))


def solve_at(samples: TSamples, kind: str, q0: float, q1: Optional[float], C1=0.99, C2=0.01, q1_tail="upper") -> ElasticFunction:
    t0, t1 = samples.quantiles(q0, q1, q1_tail)
    if kind == "step":
        return solve_step(t0)
    return solve_logistic(C1, C2, t0, t1)


def calibrate_logistic(spec: CalibrationSpec, model: EndpointModel, n_c: int, samples: Optional[TSamples] = None, threads=None):
    """Elastic function per (q0, q1) grid point; ``None`` marks infeasible points."""
    if samples is None:
        samples = simulate_T_samples(model, n_c, spec.delta, spec.R, spec.seed, threads)
    out: Dict[Tuple[float, float], Optional[ElasticFunction]] = {}
    for q0 in spec.q0_grid:
        for q1 in spec.q1_grid:
            try:
                out[(q0, q1)] = solve_at(samples, "logistic", q0, q1, spec.C1, spec.C2, spec.q1_tail)
            except CalibrationInfeasible:
                out[(q0, q1)] = None
    return out, samples


def borrowing(elastic: ElasticFunction, batch: TrialBatch, fallback_T: float) -> np.ndarray:
    """g per replicate; degenerate replicates borrow as at ``fallback_T``."""
    T = np.where(batch.degenerate, fallback_T, batch.T)
    return np.asarray(eval_elastic(elastic, T), dtype=float)


def _probs(model, batch, elastic, fallback_T):
    if elastic is None:
        return model.prob_superior(batch, 0.0)
    return model.prob_superior(batch, borrowing(elastic, batch, fallback_T))


def cutoff_from(probs, alpha=0.05) -> float:
    """Empirical (1 - alpha) quantile: exactly alpha of the null replicates exceed it."""
    return float(np.quantile(probs, 1 - alpha, method="inverted_cdf"))


def simulate_batch(model, control, treatment, n_c, n_t, size, seed, key, threads=None) -> TrialBatch:
    parts = run_blocks(
        lambda rng, m: model.simulate_trials(control, treatment, n_c, n_t, m, rng), size, seed, *key, threads=threads
    )
    return TrialBatch.concat(parts)


def calibrate_cutoff(model, elastic, n_c, n_t, R=10_000, seed=0, alpha=0.05, fallback_T=1.0, threads=None) -> float:
    """Cutoff C giving type I error alpha under the congruent null.

    ``elastic=None`` means no borrowing (g = 0).
    """
    theta = model.fitted_params()
    batch = simulate_batch(model, theta, theta, n_c, n_t, R, seed, ("null",), threads)
    return cutoff_from(_probs(model, batch, elastic, fallback_T), alpha)


def utility(rho: float, psi: float, w1: float = 1.0, w2: float = 2.0, eta: float = 0.1) -> float:
    return rho - w1 * psi - w2 * (psi - eta) * (1.0 if psi > eta else 0.0)


def _evaluate(model, elastic, fallback_T, null, alt, inc_plus, inc_minus, alpha):
    C = cutoff_from(_probs(model, null, elastic, fallback_T), alpha)
    rho = float(np.mean(_probs(model, alt, elastic, fallback_T) > C))
    psi_p = float(np.mean(_probs(model, inc_plus, elastic, fallback_T) > C))
    psi_m = float(np.mean(_probs(model, inc_minus, elastic, fallback_T) > C))
    return C, rho, max(psi_p, psi_m), (psi_p, psi_m)


def grid_search(spec: CalibrationSpec, model: EndpointModel, n_c: int, n_t: int, kind: str = "logistic", threads=None) -> CalibrationResult:
    """Utility-maximizing (q0, q1) over the CalibrationSpec grids (q0 only for the step form).

    Raises :class:`CalibrationInfeasible` if no grid point is feasible.
    """
    if kind not in ("logistic", "step"):
        raise ValueError(f"unknown elastic kind {kind!r}")
    seed = spec.seed
    samples = simulate_T_samples(model, n_c, spec.delta, spec.R, seed, threads)
    fb = samples.fallback_T
    theta = model.fitted_params()
    theta_alt = model.treatment_params(theta, spec.effect)
    shifted = {d: model.shifted_params(d, spec.delta) for d in (1, -1)}

    def batches(size, tag):
        return (
            simulate_batch(model, theta, theta_alt, n_c, n_t, size, seed, ("alt", tag), threads),
            *(simulate_batch(model, shifted[d], shifted[d], n_c, n_t, size, seed, ("inc", _TAG[d], tag), threads) for d in (1, -1)),
        )

    null = simulate_batch(model, theta, theta, n_c, n_t, spec.n_cutoff, seed, ("null",), threads)
    alt, inc_p, inc_m = batches(spec.n_search, "search")

    points = [(q0, q1) for q0 in spec.q0_grid for q1 in spec.q1_grid] if kind == "logistic" else [(q0, None) for q0 in spec.q0_grid]
    table = []
    best = None
    for q0, q1 in points:
        try:
            f = solve_at(samples, kind, q0, q1, spec.C1, spec.C2, spec.q1_tail)
        except CalibrationInfeasible as exc:
            table.append({"q0": q0, "q1": q1, "feasible": False, "reason": str(exc)})
            continue
        C, rho, psi, _ = _evaluate(model, f, fb, null, alt, inc_p, inc_m, spec.alpha)
        U = utility(rho, psi, spec.w1, spec.w2, spec.eta)
        table.append({"q0": q0, "q1": q1, "feasible": True, "cutoff": C, "rho": rho, "psi": psi, "utility": U})
        # points are visited in lexicographic order, so strict > keeps the smallest on ties
        if best is None or U > best[0]:
            best = (U, q0, q1, f)
    if best is None:
        raise CalibrationInfeasible(
            "every grid point is infeasible: congruent and incongruent T quantiles cross; "
            "delta is too small to separate them at these sample sizes"
        )
    _, q0, q1, f = best
    alt_f, inc_pf, inc_mf = batches(spec.n_cutoff, "final")
    C, rho, psi, (psi_p, psi_m) = _evaluate(model, f, fb, null, alt_f, inc_pf, inc_mf, spec.alpha)
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)
    diagnostics = {
        "grid": table,
        "n_feasible": sum(r["feasible"] for r in table),
        "search_utility": best[0],
        "psi_plus": psi_p,
        "psi_minus": psi_m,
        "T_quantiles": {
            name: {str(q): float(np.quantile(getattr(samples, name), q)) for q in qs}
            for name in ("congruent", "incongruent_plus", "incongruent_minus")
        },
    }
    return CalibrationResult(
        elastic=f,
        kind=kind,
        q0=q0,
        q1=q1,
        cutoff=C,
        rho=rho,
        psi=psi,
        utility=utility(rho, psi, spec.w1, spec.w2, spec.eta),
        fallback_T=fb,
        diagnostics=diagnostics,
    )
