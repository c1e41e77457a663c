"""Congruence statistics between historical and current control data.

Every measure is oriented so that larger T means less congruent. Scalar
functions return a :class:`CongruenceValue`; the ``*_batch`` variants work on
arrays of replicates and are what the calibration and simulation engines use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .types import BinarySummary, DataError, NormalSummary, SurvivalData

P_FLOOR = 1e-12


@dataclass(frozen=True)
class CongruenceValue:
    T: float
    kind: str
    degenerate: bool = False
    note: str = ""


# -- binary -------------------------------------------------------------------


def chi_square_batch(x_h, n_h, x_c, n_c):
    """Pearson 2x2 chi-square (no continuity correction), vectorized.

    Returns ``(T, degenerate)``; degenerate rows (pooled data all responders
    or all non-responders) get T = 0.
    """
    x_h = np.asarray(x_h, dtype=float)
    x_c = np.asarray(x_c, dtype=float)
    n_h = np.asarray(n_h, dtype=float)
    n_c = np.asarray(n_c, dtype=float)
    n = n_h + n_c
    resp = x_h + x_c
    degenerate = (resp <= 0) | (resp >= n)
    num = n * (x_h * (n_c - x_c) - x_c * (n_h - x_h)) ** 2
    den = n_h * n_c * resp * (n - resp)
    T = np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, den))
    return T, degenerate


def chi_square_congruence(h: BinarySummary, c: BinarySummary) -> CongruenceValue:
    T, deg = chi_square_batch(h.responders, h.n, c.responders, c.n)
    if deg:
        return CongruenceValue(0.0, "chi2", True, "pooled data all responders or none")
    return CongruenceValue(float(T), "chi2")


def chi_square_pvalue(T):
    return stats.chi2.sf(T, 1)


# -- normal -------------------------------------------------------------------


def t_batch(mean_h, var_h, n_h, mean_c, var_c, n_c):
    """Absolute pooled two-sample t statistic from summaries (unbiased variances).

    Returns ``(T, degenerate)``. A zero pooled SD gives T = 0 when the means
    agree and T = inf (flagged) otherwise.
    """
    mean_h, var_h, n_h, mean_c, var_c, n_c = (
        np.asarray(v, dtype=float) for v in (mean_h, var_h, n_h, mean_c, var_c, n_c)
    )
    s2 = ((n_c - 1) * var_c + (n_h - 1) * var_h) / (n_c + n_h - 2)
    diff = np.abs(mean_c - mean_h)
    zero = s2 <= 0
    scale = np.sqrt(np.where(zero, 1.0, s2) * (1 / n_h + 1 / n_c))
    T = np.where(zero, np.where(diff > 0, np.inf, 0.0), diff / scale)
    return T, zero & (diff > 0)


def t_congruence(h: NormalSummary, c: NormalSummary) -> CongruenceValue:
    if h.n + c.n < 3:
        raise DataError("t congruence needs n_h + n_c >= 3")
    T, deg = t_batch(h.mean, h.var, h.n, c.mean, c.var, c.n)
    if deg:
        return CongruenceValue(math.inf, "t", True, "zero pooled SD with unequal means")
    return CongruenceValue(float(T), "t")


def t_pvalue(T, df):
    """Two-sided p-value of an absolute t statistic."""
    return np.minimum(1.0, 2 * stats.t.sf(T, df))


def f_variance_congruence(h: NormalSummary, c: NormalSummary) -> CongruenceValue:
    if h.sd <= 0 or c.sd <= 0:
        return CongruenceValue(math.inf, "f", True, "zero sample variance")
    hi, lo = max(h.var, c.var), min(h.var, c.var)
    return CongruenceValue(hi / lo, "f")


def ks_congruence(h_raw: Sequence[float], c_raw: Sequence[float]) -> CongruenceValue:
    h = np.sort(np.asarray(h_raw, dtype=float))
    c = np.sort(np.asarray(c_raw, dtype=float))
    if h.size == 0 or c.size == 0:
        raise DataError("KS congruence needs non-empty samples")
    pts = np.concatenate((h, c))
    Fh = np.searchsorted(h, pts, side="right") / h.size
    Fc = np.searchsorted(c, pts, side="right") / c.size
    return CongruenceValue(float(np.max(np.abs(Fh - Fc))), "ks")


# -- survival -----------------------------------------------------------------


def logrank_batch(times, events, group):
    """Absolute standardized two-group logrank statistic over the last axis.

    ``group`` is 1 for the first sample and 0 for the second. Tied times are
    grouped with the hypergeometric variance. Returns ``(T, degenerate)``.
    """
    times = np.atleast_2d(np.asarray(times, dtype=float))
    events = np.atleast_2d(np.asarray(events, dtype=float))
    group = np.atleast_2d(np.asarray(group, dtype=float))
    times, events, group = np.broadcast_arrays(times, events, group)
    n = times.shape[-1]
    order = np.argsort(times, axis=-1, kind="stable")
    t = np.take_along_axis(times, order, -1)
    d = np.take_along_axis(events, order, -1)
    g = np.take_along_axis(group, order, -1)
    idx = np.broadcast_to(np.arange(n), t.shape)
    new_block = np.ones(t.shape, dtype=bool)
    new_block[..., 1:] = t[..., 1:] != t[..., :-1]
    start = np.maximum.accumulate(np.where(new_block, idx, 0), axis=-1)
    at_risk = n - start
    g_before = np.concatenate((np.zeros(t.shape[:-1] + (1,)), np.cumsum(g, -1)[..., :-1]), -1)
    g_at_risk = g.sum(-1, keepdims=True) - np.take_along_axis(g_before, start, -1)
    p = g_at_risk / at_risk
    # events per tie block, broadcast back to every member of the block
    d_cum = np.cumsum(d, -1)
    last_in_block = np.ones(t.shape, dtype=bool)
    last_in_block[..., :-1] = new_block[..., 1:]
    block_end = np.minimum.accumulate(
        np.where(last_in_block, idx, n - 1)[..., ::-1], axis=-1
    )[..., ::-1]
    d_before = np.concatenate((np.zeros(t.shape[:-1] + (1,)), d_cum[..., :-1]), -1)
    d_block = np.take_along_axis(d_cum, block_end, -1) - np.take_along_axis(d_before, start, -1)
    o_minus_e = (d * (g - p)).sum(-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ties = np.where(at_risk > 1, (at_risk - d_block) / np.maximum(at_risk - 1, 1), 1.0)
    var = (d * p * (1 - p) * ties).sum(-1)
    degenerate = var <= 0
    T = np.where(degenerate, 0.0, np.abs(o_minus_e) / np.sqrt(np.where(degenerate, 1.0, var)))
    return T, degenerate


def logrank_congruence(h: SurvivalData, c: SurvivalData) -> CongruenceValue:
    times = np.concatenate((h.times, c.times))
    events = np.concatenate((h.events, c.events))
    group = np.concatenate((np.ones(h.n), np.zeros(c.n)))
    T, deg = logrank_batch(times, events, group)
    if deg[0]:
        return CongruenceValue(0.0, "logrank", True, "no events in pooled data")
    return CongruenceValue(float(T[0]), "logrank")


def logrank_pvalue(T):
    return np.minimum(1.0, 2 * stats.norm.sf(T))


# -- combinations -------------------------------------------------------------


def chi2_log_sf(x, df):
    """log of the upper chi-square tail, stable far into the tail."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(df, dtype=float) / 2
    sf = special.gammaincc(a, x / 2)
    with np.errstate(divide="ignore"):
        out = np.log(sf)
    tiny = sf < 1e-280
    if np.any(tiny):
        # leading term of the asymptotic expansion of Gamma(a, x/2) / Gamma(a)
        h = x / 2
        approx = (a - 1) * np.log(h) - h - special.gammaln(a) + np.log1p((a - 1) / h)
        out = np.where(tiny, approx, out)
    return out


def fisher_combined_batch(pvalues, weights=None):
    """Fisher combination along the last axis; returns ``(T, clamped)``."""
    p = np.asarray(pvalues, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise DataError("p-values must lie in [0, 1]")
    clamped = (p < P_FLOOR).any(axis=-1)
    p = np.maximum(p, P_FLOOR)
    L = p.shape[-1]
    w = np.ones(L) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (L,) or np.any(w < 0):
        raise DataError("weights must be nonnegative, one per p-value")
    S = -2 * (w * np.log(p)).sum(-1)
    T = -chi2_log_sf(S, 2 * L)
    return np.maximum(T, 0.0), clamped


def fisher_combined_congruence(p: Sequence[float], w: Optional[Sequence[float]] = None) -> CongruenceValue:
    if len(p) == 0:
        raise DataError("need at least one p-value")
    T, clamped = fisher_combined_batch(np.asarray(p, dtype=float)[None, :], w)
    note = f"p-values below {P_FLOOR} clamped" if clamped[0] else ""
    return CongruenceValue(float(T[0]), "fisher", bool(clamped[0]), note)


def posterior_predictive_batch(sorted_draws, observed):
    """Two-sided posterior-predictive congruence against sorted draws."""
    draws = np.asarray(sorted_draws, dtype=float)
    R = draws.size
    obs = np.asarray(observed, dtype=float)
    below = np.searchsorted(draws, obs, side="left") / R
    above = (R - np.searchsorted(draws, obs, side="right")) / R
    pp = 2 * np.minimum(above, below)
    return -np.log(np.maximum(pp, 1.0 / R))


def posterior_predictive_congruence(predictive_means: Sequence[float], observed_mean: float) -> CongruenceValue:
    draws = np.sort(np.asarray(predictive_means, dtype=float))
    if draws.size < 100:
        raise DataError("need at least 100 predictive draws")
    T = float(posterior_predictive_batch(draws, observed_mean))
    return CongruenceValue(max(T, 0.0), "post-predictive")
