"""GIG distribution primitives and the frailty laws used in simulation.

The GIG(a, b, lam) density is

    g(x) = (a/b)^(lam/2) / (2 K_lam(sqrt(a b))) x^(lam-1) exp(-(a x + b/x) / 2)

and a GIG frailty with variance parameter ``alpha`` is GIG(1/alpha, 1/alpha, lam).
"""

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special as sc
from scipy import stats

from .special import log_bessel_ke

__all__ = [
    "FrailtyKind",
    "FrailtyLaw",
    "GigParams",
    "frailty_variance_standardized",
    "gig_log_density",
    "gig_log_laplace",
    "gig_log_moment",
    "gig_moment",
    "posterior_frailty",
    "sample_frailty",
]


@dataclass(frozen=True)
class GigParams:
    a: float
    b: float
    lam: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"GIG requires a > 0 and b > 0, got a={self.a}, b={self.b}")
        if not np.isfinite(self.lam):
            raise ValueError("lam must be finite")

    @property
    def omega(self):
        return np.sqrt(self.a * self.b)


class FrailtyKind(enum.Enum):
    GIG = "gig"
    GAMMA = "gamma"
    GENERALIZED_EXPONENTIAL = "ge"
    LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class FrailtyLaw:
    """A frailty distribution indexed by a single variance-like parameter.

    ``GIG``: GIG(1/alpha, 1/alpha, lam). ``GAMMA``: mean 1, variance alpha.
    ``GENERALIZED_EXPONENTIAL``: density ``alpha (1 - e^-z)^(alpha-1) e^-z``.
    ``LOGNORMAL``: log Z ~ N(0, alpha).
    """

    kind: FrailtyKind
    alpha: float
    lam: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @classmethod
    def gig(cls, alpha, lam):
        return cls(FrailtyKind.GIG, alpha, lam)

    @classmethod
    def gamma(cls, alpha):
        return cls(FrailtyKind.GAMMA, alpha)

    @classmethod
    def generalized_exponential(cls, alpha):
        return cls(FrailtyKind.GENERALIZED_EXPONENTIAL, alpha)

    @classmethod
    def lognormal(cls, alpha):
        return cls(FrailtyKind.LOGNORMAL, alpha)

    def gig_params(self):
        if self.kind is not FrailtyKind.GIG:
            raise ValueError(f"{self.kind} is not a GIG frailty")
        return GigParams(1.0 / self.alpha, 1.0 / self.alpha, self.lam)


def gig_log_density(p, x):
    """Log density of GIG(a, b, lam) at ``x > 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("GIG density is defined for x > 0")
    a, b, lam = p.a, p.b, p.lam
    return (
        0.5 * lam * np.log(a / b)
        - np.log(2.0)
        - log_bessel_ke(lam, p.omega)
        + (lam - 1.0) * np.log(x)
        # (a x + b/x)/2 - sqrt(a b), kept free of cancellation
        - 0.5 * (np.sqrt(a * x) - np.sqrt(b / x)) ** 2
    )[()]


def gig_log_laplace(p, t):
    """Log Laplace transform ``log E exp(-t X)`` for ``t > -a/2``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= -0.5 * p.a):
        raise ValueError(f"Laplace transform requires t > -a/2 = {-0.5 * p.a}")
    a2t = p.a + 2.0 * t
    # omega - sqrt((a + 2t) b) without cancellation
    shift = -2.0 * t * np.sqrt(p.b) / (np.sqrt(p.a) + np.sqrt(a2t))
    return (
        log_bessel_ke(p.lam, np.sqrt(a2t * p.b))
        - log_bessel_ke(p.lam, p.omega)
        + shift
        + 0.5 * p.lam * (np.log(p.a) - np.log(a2t))
    )[()]


def _log_moment(a, b, lam, k):
    # array-friendly core shared with the E-step
    omega = np.sqrt(a * b)
    return log_bessel_ke(lam + k, omega) - log_bessel_ke(lam, omega) + 0.5 * k * np.log(b / a)


def gig_log_moment(p, k):
    return _log_moment(p.a, p.b, p.lam, k)


def gig_moment(p, k):
    """``E(X^k)`` for real ``k`` (negative allowed)."""
    return float(np.exp(gig_log_moment(p, k)))


def frailty_variance_standardized(law):
    """``Var(Z) / E(Z)^2``, the scale-free frailty variance."""
    alpha = law.alpha
    if law.kind is FrailtyKind.GIG:
        p = law.gig_params()
        # E(Z^2)/E(Z)^2 - 1, formed in log scale
        return float(np.expm1(gig_log_moment(p, 2.0) - 2.0 * gig_log_moment(p, 1.0)))
    if law.kind is FrailtyKind.GAMMA:
        return float(alpha)
    if law.kind is FrailtyKind.LOGNORMAL:
        return float(np.expm1(alpha))
    if law.kind is FrailtyKind.GENERALIZED_EXPONENTIAL:
        mean = sc.digamma(alpha + 1.0) - sc.digamma(1.0)
        var = sc.polygamma(1, 1.0) - sc.polygamma(1, alpha + 1.0)
        return float(var / mean**2)
    raise ValueError(f"unknown frailty kind {law.kind}")


def sample_gig(p, rng, size=None):
    # X = sqrt(b/a) Y with Y ~ geninvgauss(lam, sqrt(a b))
    return stats.geninvgauss.rvs(
        p.lam, p.omega, scale=np.sqrt(p.b / p.a), size=size, random_state=rng
    )


def sample_frailty(law, rng, size=None):
    """Draw from ``law`` using the numpy ``Generator`` ``rng``."""
    alpha = law.alpha
    if law.kind is FrailtyKind.GIG:
        return sample_gig(law.gig_params(), rng, size)
    if law.kind is FrailtyKind.GAMMA:
        return rng.gamma(1.0 / alpha, alpha, size=size)
    if law.kind is FrailtyKind.LOGNORMAL:
        return rng.lognormal(0.0, np.sqrt(alpha), size=size)
    if law.kind is FrailtyKind.GENERALIZED_EXPONENTIAL:
        # inverse CDF of (1 - e^-z)^alpha
        u = rng.random(size)
        return -np.log1p(-(u ** (1.0 / alpha)))
    raise ValueError(f"unknown frailty kind {law.kind}")


def posterior_frailty(prior, cum_hazard_sum, event_count):
    """Conditional law of a GIG frailty given a cluster's data.

    ``cum_hazard_sum`` is ``sum_j H0(t_j) exp(x_j' beta)`` over the cluster and
    ``event_count`` the number of observed failures. Returns
    GIG(1/alpha + 2 * cum_hazard_sum, 1/alpha, lam + event_count).
    """
    base = prior.gig_params()
    if cum_hazard_sum < 0:
        raise ValueError("cum_hazard_sum must be non-negative")
    return GigParams(base.a + 2.0 * cum_hazard_sum, base.b, base.lam + event_count)
