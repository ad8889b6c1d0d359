"""Baseline hazards: piecewise exponential and Weibull."""

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CutMethod",
    "PeBaseline",
    "WeibullBaseline",
    "exposure_matrix",
    "interval_index",
    "make_cuts",
    "pe_cum_hazard",
    "pe_hazard",
    "weibull_cum_hazard",
    "weibull_hazard",
]


def _check_times(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("times must be positive")
    return t


def interval_index(cuts, t):
    """Index ``l`` (0-based) of the interval ``[c_{l-1}, c_l)`` containing ``t``."""
    return np.searchsorted(cuts, t, side="right")


def exposure_matrix(cuts, t):
    """Time spent in each baseline interval, shape ``(len(t), len(cuts) + 1)``."""
    t = np.asarray(t, dtype=float)
    edges = np.concatenate(([0.0], np.asarray(cuts, dtype=float)))
    upper = np.concatenate((edges[1:], [np.inf]))
    return np.clip(np.minimum(t[:, None], upper) - edges, 0.0, None)


@dataclass(frozen=True, eq=False)
class PeBaseline:
    """Piecewise-constant hazard: ``rates[l]`` on ``[cuts[l-1], cuts[l])``.

    With ``k`` interior cuts there are ``k + 1`` rates; the last one applies
    beyond the final cut.
    """

    cuts: np.ndarray
    rates: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=float).reshape(-1)
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        if rates.size != cuts.size + 1:
            raise ValueError(f"need {cuts.size + 1} rates for {cuts.size} cuts, got {rates.size}")
        if cuts.size and (cuts[0] <= 0 or np.any(np.diff(cuts) <= 0)):
            raise ValueError("cuts must be positive and strictly increasing")
        if np.any(~(rates > 0)) or not np.all(np.isfinite(rates)):
            raise ValueError("rates must be positive and finite")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "rates", rates)
        widths = np.diff(np.concatenate(([0.0], cuts)))
        object.__setattr__(self, "_cum", np.concatenate(([0.0], np.cumsum(rates[:-1] * widths))))

    @property
    def n_params(self):
        return self.rates.size

    def hazard(self, t):
        t = _check_times(t)
        return self.rates[interval_index(self.cuts, t)][()]

    def cum_hazard(self, t):
        t = _check_times(t)
        idx = interval_index(self.cuts, t)
        start = np.concatenate(([0.0], self.cuts))[idx]
        return (self._cum[idx] + self.rates[idx] * (t - start))[()]

    def with_rates(self, rates):
        return PeBaseline(self.cuts, rates)


@dataclass(frozen=True)
class WeibullBaseline:
    """``h0(t) = sigma * gamma * t^(gamma-1)``, ``H0(t) = sigma * t^gamma``."""

    sigma: float
    gamma: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.gamma > 0):
            raise ValueError("Weibull sigma and gamma must be positive")

    n_params = 2

    def hazard(self, t):
        t = _check_times(t)
        return (self.sigma * self.gamma * t ** (self.gamma - 1.0))[()]

    def cum_hazard(self, t):
        t = _check_times(t)
        return (self.sigma * t**self.gamma)[()]


def pe_hazard(b, t):
    return b.hazard(t)


def pe_cum_hazard(b, t):
    return b.cum_hazard(t)


def weibull_hazard(b, t):
    return b.hazard(t)


def weibull_cum_hazard(b, t):
    return b.cum_hazard(t)


class CutMethod(enum.Enum):
    FAILURE_QUANTILES = "quantile"
    EVEN_TIME = "even"


def make_cuts(times, events, k, method=CutMethod.FAILURE_QUANTILES):
    """Place ``k`` interior cut points for a piecewise-exponential baseline.

    ``FAILURE_QUANTILES`` puts the cuts at the ``j/(k+1)`` empirical quantiles
    (linear interpolation) of the observed failure times; ``EVEN_TIME`` spaces
    them evenly on ``(0, max(times))``.
    """
    method = CutMethod(method)
    times = _check_times(times)
    events = np.asarray(events).astype(bool)
    k = int(k)
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return np.empty(0)
    probs = np.arange(1, k + 1) / (k + 1)
    if method is CutMethod.EVEN_TIME:
        return times.max() * probs
    failures = times[events]
    distinct = np.unique(failures)
    if distinct.size < k:
        raise ValueError(f"need at least {k} distinct failure times, have {distinct.size}")
    cuts = np.quantile(failures, probs)
    if np.any(np.diff(cuts) <= 0):
        # heavy ties; fall back to quantiles of the distinct failure times
        cuts = np.quantile(distinct, probs)
    return cuts
