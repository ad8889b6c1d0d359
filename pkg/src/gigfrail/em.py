"""EM estimation of the GIG frailty model with a piecewise-exponential baseline.

The E-step is closed form: given a cluster's data the frailty is again GIG,

    Z_i | data ~ GIG(1/alpha + 2 s_i, 1/alpha, lam + d_i),

so ``omega_i = E(Z_i | data)`` and ``kappa_i = E(1/Z_i | data)`` are Bessel
ratios. The expected complete-data log-likelihood splits into a part in
``(beta, eta)`` and a part in ``alpha`` which are maximized separately.
"""

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .baseline import CutMethod, PeBaseline, exposure_matrix, interval_index, make_cuts
from .distributions import FrailtyLaw, _log_moment, frailty_variance_standardized
from .likelihood import ModelParams, NumericalError, _cluster_terms, observed_log_likelihood
from .special import log_bessel_ke

__all__ = [
    "EmConfig",
    "FitResult",
    "Optimizer",
    "e_step",
    "fit_em",
    "initial_params",
    "m_step",
    "q1",
    "q2",
]

log = logging.getLogger(__name__)

# bounds on log(alpha) for the frailty M-step
LOG_ALPHA_BOUNDS = (np.log(1e-8), np.log(1e8))
# rate given to an interval with no failures, relative to the crude overall rate
RATE_FLOOR = 1e-10


class Optimizer(enum.Enum):
    NEWTON = "newton"
    QUASI_NEWTON = "quasi-newton"
    SIMPLEX = "simplex"


@dataclass(frozen=True)
class EmConfig:
    """Settings for :func:`fit_em`.

    ``tol`` applies to the largest absolute change of ``(beta, log eta, log alpha)``
    between iterations. ``cuts`` overrides ``k_cuts``/``cut_method`` when given.
    """

    lam: float = 0.0
    k_cuts: int = 10
    cut_method: CutMethod = CutMethod.FAILURE_QUANTILES
    cuts: tuple = None
    tol: float = 1e-6
    max_iter: int = 500
    optimizer: Optimizer = Optimizer.NEWTON

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        object.__setattr__(self, "cut_method", CutMethod(self.cut_method))
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.cuts is not None:
            object.__setattr__(self, "cuts", tuple(float(c) for c in self.cuts))


@dataclass(eq=False)
class FitResult:
    params: ModelParams
    loglik: float
    loglik_trace: list
    n_iter: int
    converged: bool
    standardized_frailty_variance: float
    posterior_frailty_means: np.ndarray
    covariate_names: tuple = ()
    method: str = "em"
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def n_params(self):
        return self.params.beta.size + self.params.baseline.n_params + 1

    @property
    def aic(self):
        return 2.0 * self.n_params - 2.0 * self.loglik

    def estimates(self):
        """Named point estimates, in a fixed order."""
        p = self.params
        out = {}
        names = self.covariate_names or tuple(f"x{j + 1}" for j in range(p.beta.size))
        for name, b in zip(names, p.beta):
            out[f"beta_{name}"] = float(b)
        out["alpha"] = float(p.alpha)
        out["var"] = float(self.standardized_frailty_variance)
        bl = p.baseline
        if isinstance(bl, PeBaseline):
            for j, r in enumerate(bl.rates):
                out[f"eta_{j + 1}"] = float(r)
        else:
            out["sigma"] = float(bl.sigma)
            out["gamma"] = float(bl.gamma)
        return out


def e_step(params, data):
    """Posterior means of ``Z_i`` and ``1/Z_i`` for every cluster."""
    s, d, _ = _cluster_terms(params, data)
    a = 1.0 / params.alpha + 2.0 * s
    b = 1.0 / params.alpha
    order = params.lam + d
    omega = np.exp(_log_moment(a, b, order, 1.0))
    kappa = np.exp(_log_moment(a, b, order, -1.0))
    bad = ~(np.isfinite(omega) & np.isfinite(kappa))
    if np.any(bad):
        raise NumericalError(f"E-step failed in clusters {np.flatnonzero(bad).tolist()}")
    return omega, kappa


def q1(beta, baseline, data, omega):
    """Expected complete-data log-likelihood part in ``(beta, baseline)``."""
    beta = np.asarray(beta, dtype=float)
    eta = data.covariates @ beta if data.n_covariates else np.zeros(data.n_obs)
    ev = data.status == 1
    event_part = np.sum(eta[ev] + np.log(baseline.hazard(data.time[ev])))
    risk_part = np.sum(omega[data.cluster] * np.exp(eta) * baseline.cum_hazard(data.time))
    return float(event_part - risk_part)


def q2(alpha, omega, kappa, lam):
    """Expected complete-data log-likelihood part in ``alpha``."""
    omega = np.asarray(omega)
    m = omega.size
    # log K = log(e^x K) - x, with the -m/alpha folded into the second term
    return float(
        -m * log_bessel_ke(lam, 1.0 / alpha)
        - (np.sum(omega + np.asarray(kappa)) - 2.0 * m) / (2.0 * alpha)
    )


class _PeDesign:
    """Quantities of Q1 that do not change across EM iterations."""

    def __init__(self, data, cuts):
        self.data = data
        self.cuts = np.asarray(cuts, dtype=float)
        self.X = data.covariates
        self.exposure = exposure_matrix(self.cuts, data.time)
        ev = data.status == 1
        k1 = self.cuts.size + 1
        self.failures = np.bincount(interval_index(self.cuts, data.time[ev]), minlength=k1).astype(float)
        self.x_events = self.X[ev].sum(axis=0)
        self.rate_floor = RATE_FLOOR * data.status.sum() / data.time.sum()

    def rates_given(self, beta, omega):
        risk = omega[self.data.cluster] * np.exp(self.X @ beta)
        at_risk = self.exposure.T @ risk
        rates = np.divide(self.failures, at_risk, out=np.zeros_like(at_risk), where=at_risk > 0)
        return np.maximum(rates, self.rate_floor)

    def q1(self, beta, log_rates, omega):
        rates = np.exp(log_rates)
        risk = omega[self.data.cluster] * np.exp(self.X @ beta)
        return float(
            self.x_events @ beta + self.failures @ log_rates - risk @ (self.exposure @ rates)
        )

    def profile(self, beta, omega):
        """Q1 maximized over the rates, with gradient and Hessian in ``beta``."""
        X, E, D = self.X, self.exposure, self.failures
        risk = omega[self.data.cluster] * np.exp(X @ beta)
        S = E.T @ risk
        pos = D > 0
        value = self.x_events @ beta + np.sum(D[pos] * np.log(D[pos] / S[pos])) - D.sum()
        u = risk * (E @ np.where(pos, D / S, 0.0))
        grad = X.T @ (self.data.status - u)
        A = X.T @ (risk[:, None] * E)
        hess = -(X.T * u) @ X + (A * np.where(pos, D / S**2, 0.0)) @ A.T
        return value, grad, hess


def _newton_q1(design, omega, beta0, max_iter=100):
    beta = np.array(beta0, dtype=float)
    if beta.size == 0:
        return beta
    value, grad, hess = design.profile(beta, omega)
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        while True:
            cand = beta + t * step
            v, g, h = design.profile(cand, omega)
            if np.isfinite(v) and v >= value - 1e-12 * abs(value):
                break
            t *= 0.5
            if t < 1e-10:
                return beta
        beta, value, grad, hess = cand, v, g, h
        if np.max(np.abs(t * step)) < 1e-11:
            break
    return beta


def _numeric_grad(f, x):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _maximize(f, x0, optimizer):
    """Maximize ``f`` starting at ``x0`` with BFGS (numeric gradient) or Nelder-Mead."""
    neg = lambda x: -f(x)  # noqa: E731
    if optimizer is Optimizer.SIMPLEX:
        res = optimize.minimize(
            neg, x0, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000, "maxfev": 40000},
        )
    else:
        res = optimize.minimize(neg, x0, jac=lambda x: -_numeric_grad(f, x), method="BFGS",
                                options={"gtol": 1e-8, "maxiter": 2000})
    return res.x


def _prior_z_plus_inv(log_alpha, lam):
    z = math.exp(-log_alpha)
    lk = log_bessel_ke(lam, z)
    return math.exp(log_bessel_ke(lam + 1.0, z) - lk) + math.exp(log_bessel_ke(lam - 1.0, z) - lk)


def _solve_alpha(omega, kappa, lam, log_alpha0):
    """Maximizer of Q2 in ``log alpha``.

    Q2 is an exponential-family log-likelihood in ``-1/(2 alpha)`` with
    sufficient statistic ``z + 1/z``, so its unique maximizer solves
    ``E_alpha(Z + 1/Z) = mean(omega + kappa)``; the left side increases in alpha.
    """
    target = float(np.mean(omega + kappa))
    lam = float(lam)
    lo, hi = LOG_ALPHA_BOUNDS
    g = lambda r: _prior_z_plus_inv(r, lam) - target  # noqa: E731
    g_lo, g_hi = g(lo), g(hi)
    if g_lo >= 0:
        return lo
    if g_hi <= 0:
        return hi
    # shrink the bracket around the warm start when possible
    a, b = lo, hi
    for w in (0.5, 2.0, 8.0):
        ca, cb = max(lo, log_alpha0 - w), min(hi, log_alpha0 + w)
        if g(ca) < 0 < g(cb):
            a, b = ca, cb
            break
    return optimize.brentq(g, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)


_ROUNDING = 1e-13


def _m_step(design, omega, kappa, current, optimizer):
    lam = current.lam
    beta0 = current.beta
    log_rates0 = np.log(current.baseline.rates)
    k1 = log_rates0.size
    p = beta0.size
    q1_old = design.q1(beta0, log_rates0, omega)

    if optimizer is Optimizer.NEWTON:
        beta = _newton_q1(design, omega, beta0)
        log_rates = np.log(design.rates_given(beta, omega))
        log_alpha = _solve_alpha(omega, kappa, lam, np.log(current.alpha))
    else:
        f1 = lambda v: design.q1(v[:p], v[p:], omega)  # noqa: E731
        v = _maximize(f1, np.concatenate((beta0, log_rates0)), optimizer)
        beta, log_rates = v[:p], v[p:]
        f2 = lambda r: q2(np.exp(r[0]), omega, kappa, lam)  # noqa: E731
        log_alpha = float(np.clip(_maximize(f2, np.array([np.log(current.alpha)]), optimizer)[0],
                                  *LOG_ALPHA_BOUNDS))

    # never accept a step that lowers either part of Q beyond rounding
    if design.q1(beta, log_rates, omega) < q1_old - _ROUNDING * abs(q1_old):
        beta, log_rates = beta0, log_rates0
    q2_old = q2(current.alpha, omega, kappa, lam)
    if q2(np.exp(log_alpha), omega, kappa, lam) < q2_old - _ROUNDING * abs(q2_old):
        log_alpha = np.log(current.alpha)
    assert log_rates.size == k1
    return ModelParams(beta, current.baseline.with_rates(np.exp(log_rates)), float(np.exp(log_alpha)), lam)


def m_step(data, omega, kappa, current, cfg=None):
    """One M-step: maximize Q1 over ``(beta, log eta)`` and Q2 over ``log alpha``."""
    cfg = cfg or EmConfig(lam=current.lam)
    design = _PeDesign(data, current.baseline.cuts)
    return _m_step(design, np.asarray(omega, float), np.asarray(kappa, float), current, cfg.optimizer)


def _theta(params):
    return np.concatenate((params.beta, np.log(params.baseline.rates), [np.log(params.alpha)]))


def _cuts_for(data, cfg):
    if cfg.cuts is not None:
        return np.asarray(cfg.cuts, dtype=float)
    return make_cuts(data.time, data.status, cfg.k_cuts, cfg.cut_method)


def initial_params(data, cfg, cuts=None):
    """Starting values: no-frailty PE fit for beta, alpha = 1, interval-wise crude rates.

    The rate of interval ``l`` starts at (number of failures in ``l``) divided by
    (sum of those failure times); intervals without failures get the overall
    ``sum(delta) / sum(t)``.
    """
    cuts = _cuts_for(data, cfg) if cuts is None else np.asarray(cuts, dtype=float)
    design = _PeDesign(data, cuts)
    ones = np.ones(data.n_clusters)
    beta = _newton_q1(design, ones, np.zeros(data.n_covariates))

    ev = data.status == 1
    t_ev = data.time[ev]
    idx = interval_index(cuts, t_ev)
    k1 = cuts.size + 1
    counts = np.bincount(idx, minlength=k1)
    sums = np.bincount(idx, weights=t_ev, minlength=k1)
    overall = ev.sum() / data.time.sum()
    rates = np.where(counts > 0, counts / np.where(sums > 0, sums, 1.0), overall)
    return ModelParams(beta, PeBaseline(cuts, rates), 1.0, cfg.lam)


def fit_em(data, cfg=None, init=None):
    """Fit the PE-GIG frailty model by EM.

    Parameters
    ----------
    data : Dataset
    cfg : EmConfig, optional
    init : ModelParams, optional
        Warm start; its cut points are reused and ``cfg.lam`` is imposed.

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iter`` is reached; no exception is raised.
    """
    cfg = cfg or EmConfig()
    if data.status.sum() == 0:
        raise ValueError("cannot fit a dataset without events")
    if init is None:
        params = initial_params(data, cfg)
    else:
        params = ModelParams(init.beta, init.baseline, init.alpha, cfg.lam)
    design = _PeDesign(data, params.baseline.cuts)

    trace = [observed_log_likelihood(params, data)]
    converged = False
    n_iter = 0
    theta = _theta(params)
    for n_iter in range(1, cfg.max_iter + 1):
        omega, kappa = e_step(params, data)
        params = _m_step(design, omega, kappa, params, cfg.optimizer)
        trace.append(observed_log_likelihood(params, data))
        new_theta = _theta(params)
        delta = np.max(np.abs(new_theta - theta))
        theta = new_theta
        if delta < cfg.tol:
            converged = True
            break
    if not converged:
        log.warning("EM did not converge in %d iterations (lam=%g)", cfg.max_iter, cfg.lam)

    omega, _ = e_step(params, data)
    return FitResult(
        params=params,
        loglik=trace[-1],
        loglik_trace=trace,
        n_iter=n_iter,
        converged=converged,
        standardized_frailty_variance=frailty_variance_standardized(FrailtyLaw.gig(params.alpha, cfg.lam)),
        posterior_frailty_means=omega,
        covariate_names=data.covariate_names,
        method="em",
    )
