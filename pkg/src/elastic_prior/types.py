"""Domain records shared across the package.

Summaries are the canonical interchange form. Raw samples are optional and
only needed by the KS congruence measure and the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np


class DataError(ValueError):
    """Input data violates a record invariant."""


class CalibrationInfeasible(RuntimeError):
    """No elastic function satisfies the borrowing constraints."""


@dataclass(frozen=True)
class BinarySummary:
    n: int
    responders: int

    def __post_init__(self):
        if self.n < 1:
            raise DataError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.responders <= self.n:
            raise DataError(f"responders must lie in [0, {self.n}], got {self.responders}")

    @property
    def rate(self) -> float:
        return self.responders / self.n

    @classmethod
    def from_raw(cls, y: Sequence[int]) -> "BinarySummary":
        y = np.asarray(y)
        if not np.isin(y, (0, 1)).all():
            raise DataError("binary outcomes must be 0 or 1")
        return cls(int(y.size), int(y.sum()))


@dataclass(frozen=True)
class NormalSummary:
    """n, mean and sample SD (divisor n-1) of a continuous endpoint."""

    n: int
    mean: float
    sd: float
    raw: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise DataError(f"n must be >= 1, got {self.n}")
        if not self.sd >= 0 or not math.isfinite(self.sd):
            raise DataError(f"sd must be finite and >= 0, got {self.sd}")
        if self.raw is not None:
            raw = np.asarray(self.raw, dtype=float)
            if raw.size != self.n:
                raise DataError("raw sample length differs from n")
            m = raw.mean()
            s = raw.std(ddof=1) if raw.size > 1 else 0.0
            if not math.isclose(m, self.mean, rel_tol=1e-10, abs_tol=1e-12):
                raise DataError("mean does not match raw sample")
            if not math.isclose(s, self.sd, rel_tol=1e-10, abs_tol=1e-12):
                raise DataError("sd does not match raw sample")

    @property
    def var(self) -> float:
        return self.sd**2

    @property
    def ml_var(self) -> float:
        """Maximum-likelihood variance (divisor n)."""
        return self.sd**2 * (self.n - 1) / self.n

    @property
    def sum_squares(self) -> float:
        """Sum of y_i^2, recovered from the summary."""
        return (self.n - 1) * self.sd**2 + self.n * self.mean**2

    @classmethod
    def from_raw(cls, y: Sequence[float]) -> "NormalSummary":
        y = np.asarray(y, dtype=float)
        if y.size < 1:
            raise DataError("empty sample")
        sd = float(y.std(ddof=1)) if y.size > 1 else 0.0
        return cls(int(y.size), float(y.mean()), sd, raw=tuple(float(v) for v in y))


@dataclass(frozen=True)
class SurvivalData:
    """Observed times, event indicators and interval cut points.

    ``partition`` holds d_1 < ... < d_J. The last cut may be ``inf`` for an
    open final interval (no administrative censoring).
    """

    times: tuple
    events: tuple
    partition: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        events = np.asarray(self.events)
        cuts = np.asarray(self.partition, dtype=float)
        if times.shape != events.shape or times.ndim != 1:
            raise DataError("times and events must be 1-d and of equal length")
        if cuts.size < 1:
            raise DataError("partition needs at least one cut point")
        if cuts[0] <= 0 or np.any(np.diff(cuts) <= 0):
            raise DataError("partition must be strictly increasing and positive")
        if np.any(times < 0):
            raise DataError("times must be nonnegative")
        if np.any(times > cuts[-1]):
            raise DataError(f"time exceeds last cut point {cuts[-1]}")
        if not np.isin(events, (0, 1)).all():
            raise DataError("event indicators must be 0 or 1")
        object.__setattr__(self, "times", tuple(float(t) for t in times))
        object.__setattr__(self, "events", tuple(int(e) for e in events))
        object.__setattr__(self, "partition", tuple(float(d) for d in cuts))

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def n_events(self) -> int:
        return sum(self.events)


@dataclass(frozen=True)
class IntervalSufficientStats:
    events: tuple
    exposure: tuple

    @property
    def n_intervals(self) -> int:
        return len(self.events)

    def hazard_mle(self) -> np.ndarray:
        ev = np.asarray(self.events, dtype=float)
        ex = np.asarray(self.exposure, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(ex > 0, ev / np.where(ex > 0, ex, 1.0), 0.0)


def interval_stats_arrays(times, events, partition):
    """Per-interval event counts and exposures for arrays of subjects.

    ``times``/``events`` may carry leading batch dimensions; the subject
    axis is last. Returns ``(events, exposure)`` with a trailing interval
    axis of length J.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    cuts = np.asarray(partition, dtype=float)
    lower = np.concatenate(([0.0], cuts[:-1]))
    t = times[..., None]
    exposure = np.clip(np.minimum(t, cuts) - lower, 0.0, None).sum(axis=-2)
    # intervals are [d_{j-1}, d_j); the last one is closed at d_J
    idx = np.searchsorted(cuts, times, side="right")
    idx = np.minimum(idx, cuts.size - 1)
    onehot = (idx[..., None] == np.arange(cuts.size)) & (events[..., None] == 1)
    return onehot.sum(axis=-2), exposure


def survival_sufficient_stats(data: SurvivalData) -> IntervalSufficientStats:
    ev, ex = interval_stats_arrays(data.times, data.events, data.partition)
    return IntervalSufficientStats(
        events=tuple(int(v) for v in ev), exposure=tuple(float(v) for v in ex)
    )


Summary = Union[BinarySummary, NormalSummary, SurvivalData]


@dataclass(frozen=True)
class LogisticElastic:
    """g(T) = 1 / (1 + exp(a + b * (log T)^c))."""

    a: float
    b: float
    c: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"b must be > 0, got {self.b}")
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")


@dataclass(frozen=True)
class StepElastic:
    """g(T) = 1 for T <= threshold, else 0."""

    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")


ElasticFunction = Union[LogisticElastic, StepElastic]


@dataclass(frozen=True)
class CalibrationSpec:
    """Inputs to the elastic-function calibration and grid search.

    ``effect`` is the treatment effect defining the congruent alternative
    used for the power term of the utility (additive for binary/normal,
    a hazard multiplier for survival).

    ``q1_tail`` fixes how q1 reads the incongruent T samples: ``"upper"``
    takes the value exceeded by a fraction q1 of them (the (1 - q1)
    quantile), so the no-borrowing region covers mass q1 just as the
    borrowing region covers mass q0 of the congruent samples;
    ``"lower"`` takes the plain q1 quantile.
    """

    delta: float
    effect: float
    C1: float = 0.99
    C2: float = 0.01
    q0_grid: tuple = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    q1_grid: tuple = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    w1: float = 1.0
    w2: float = 2.0
    eta: float = 0.1
    R: int = 10_000
    n_search: int = 1_000
    n_cutoff: int = 10_000
    alpha: float = 0.05
    seed: int = 0
    q1_tail: str = "upper"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if not 0 < self.C2 < self.C1 < 1:
            raise ValueError("need 0 < C2 < C1 < 1")
        for name in ("q0_grid", "q1_grid"):
            grid = tuple(float(q) for q in getattr(self, name))
            if not grid or any(not 0 < q < 1 for q in grid) or list(grid) != sorted(grid):
                raise ValueError(f"{name} must be sorted within (0, 1)")
            object.__setattr__(self, name, grid)
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("penalty weights must be >= 0")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.R < 100 or self.n_search < 100 or self.n_cutoff < 100:
            raise ValueError("replicate counts must be >= 100")
        if self.q1_tail not in ("upper", "lower"):
            raise ValueError("q1_tail must be 'upper' or 'lower'")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
