"""Inference around a single fit: parametric Weibull MLE, bootstrap, profile
likelihood in lambda, AIC choice of the number of cuts, relative frailty
variance and Kaplan-Meier/Nelson-Aalen estimators."""

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .baseline import WeibullBaseline
from .distributions import FrailtyLaw, frailty_variance_standardized, gig_moment
from .em import EmConfig, FitResult, Optimizer, _numeric_grad, e_step, fit_em, initial_params
from .likelihood import ModelParams, NumericalError, observed_log_likelihood
from .special import log_psi_scaled

__all__ = [
    "BootstrapResult",
    "ProfilePoint",
    "aic_path",
    "bootstrap_se",
    "cgf",
    "cgf_derivatives",
    "fit_parametric_weibull",
    "kaplan_meier",
    "nelson_aalen",
    "profile_argmax",
    "profile_lambda",
    "rfv",
    "rfv_alpha_for_target",
    "select_cuts_aic",
]

log = logging.getLogger(__name__)


# -- parametric Weibull ----------------------------------------------------


def _weibull_params(v, p, lam):
    return ModelParams(v[:p], WeibullBaseline(math.exp(v[p]), math.exp(v[p + 1])), math.exp(v[p + 2]), lam)


def fit_parametric_weibull(data, lam, cfg=None, init=None):
    """Maximize the observed log-likelihood with a Weibull baseline.

    Works on ``(beta, log sigma, log gamma, log alpha)``. BFGS with central
    difference gradients is used unless ``cfg.optimizer`` is ``SIMPLEX``;
    when BFGS reports failure Nelder-Mead continues from where it stopped.
    """
    cfg = cfg or EmConfig(lam=lam)
    p = data.n_covariates
    if init is None:
        beta0 = initial_params(data, dataclasses.replace(cfg, lam=lam, k_cuts=0, cuts=None)).beta
        v0 = np.concatenate((beta0, [math.log(data.status.sum() / data.time.sum()), 0.0, 0.0]))
    else:
        v0 = np.concatenate((init.beta, [math.log(init.baseline.sigma), math.log(init.baseline.gamma),
                                         math.log(init.alpha)]))

    def loglik(v):
        try:
            return observed_log_likelihood(_weibull_params(v, p, lam), data)
        except (NumericalError, ValueError, OverflowError):
            return -np.inf

    ll0 = loglik(v0)
    neg = lambda v: -loglik(v)  # noqa: E731
    simplex = dict(method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000, "maxfev": 40000})
    if cfg.optimizer is Optimizer.SIMPLEX:
        res = optimize.minimize(neg, v0, **simplex)
    else:
        res = optimize.minimize(neg, v0, jac=lambda v: -_numeric_grad(loglik, v), method="BFGS",
                                options={"gtol": 1e-6, "maxiter": 2000})
        if not res.success:
            log.info("BFGS stopped (%s); refining with Nelder-Mead", res.message)
            res = optimize.minimize(neg, res.x if np.isfinite(res.fun) else v0, **simplex)
    v = res.x
    converged = bool(res.success) and np.isfinite(res.fun)
    params = _weibull_params(v, p, lam)
    ll = observed_log_likelihood(params, data)
    omega, _ = e_step(params, data)
    return FitResult(
        params=params,
        loglik=ll,
        loglik_trace=[ll0, ll],
        n_iter=int(res.nit),
        converged=converged,
        standardized_frailty_variance=frailty_variance_standardized(FrailtyLaw.gig(params.alpha, lam)),
        posterior_frailty_means=omega,
        covariate_names=data.covariate_names,
        method="weibull",
        message=str(res.message),
    )


# -- bootstrap -------------------------------------------------------------


@dataclass
class BootstrapResult:
    replicates: list
    standard_errors: dict
    n_resamples: int
    seed: int
    n_failed: int = 0
    degenerate: bool = False


def bootstrap_se(data, cfg=None, B=200, seed=0, baseline="pe"):
    """Cluster bootstrap standard errors.

    Each of the ``B`` resamples draws ``m`` clusters with replacement using
    the ``b``-th child of ``SeedSequence(seed)`` and refits the model. Fits
    that fail or do not converge are dropped and counted in ``n_failed``.
    With a single usable replicate all standard errors are 0 and the result
    is flagged ``degenerate``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    cfg = cfg or EmConfig()
    m = data.n_clusters
    replicates = []
    n_failed = 0
    for child in np.random.SeedSequence(seed).spawn(B):
        idx = np.random.default_rng(child).integers(0, m, size=m)
        boot = data.take_clusters(idx)
        try:
            if baseline == "weibull":
                fit = fit_parametric_weibull(boot, cfg.lam, cfg)
            else:
                fit = fit_em(boot, cfg)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("bootstrap replicate failed: %s", exc)
            n_failed += 1
            continue
        if not fit.converged:
            n_failed += 1
            continue
        replicates.append(fit.estimates())
    if not replicates:
        raise RuntimeError(f"all {B} bootstrap replicates failed")
    keys = [k for k in replicates[0] if all(k in r for r in replicates)]
    degenerate = len(replicates) == 1
    ses = {}
    for k in keys:
        vals = np.array([r[k] for r in replicates])
        ses[k] = 0.0 if degenerate else float(np.std(vals, ddof=1))
    if degenerate:
        log.warning("bootstrap with one usable replicate; standard errors set to 0")
    return BootstrapResult(replicates, ses, B, seed, n_failed, degenerate)


# -- lambda profile and cut selection -------------------------------------


@dataclass
class ProfilePoint:
    lam: float
    loglik: float
    params: ModelParams
    converged: bool = True


def profile_lambda(data, grid, cfg=None):
    """Fit the PE-GIG model at every ``lam`` in ``grid``.

    Points whose fit raises are skipped with a warning.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid must not be empty")
    cfg = cfg or EmConfig()
    points = []
    for lam in grid:
        try:
            fit = fit_em(data, dataclasses.replace(cfg, lam=float(lam)))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("profile point lam=%g failed: %s", lam, exc)
            continue
        points.append(ProfilePoint(float(lam), fit.loglik, fit.params, fit.converged))
    return points


def profile_argmax(points):
    return max(points, key=lambda pt: pt.loglik)


def aic_path(data, lam, k_range, cfg=None):
    """``{k: (aic, FitResult)}`` for each number of cuts in ``k_range``."""
    cfg = cfg or EmConfig(lam=lam)
    out = {}
    for k in k_range:
        try:
            fit = fit_em(data, dataclasses.replace(cfg, lam=lam, k_cuts=int(k), cuts=None))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("k=%d failed: %s", k, exc)
            continue
        out[int(k)] = (fit.aic, fit)
    return out


def select_cuts_aic(data, lam, k_range, cfg=None):
    """Number of cuts minimizing ``AIC = 2 (p + k + 2) - 2 loglik``; returns ``(k, fit)``."""
    k_range = list(k_range)
    if not k_range:
        raise ValueError("k_range must not be empty")
    path = aic_path(data, lam, k_range, cfg)
    if not path:
        raise RuntimeError("no fit succeeded for any k")
    for k, (a, _) in path.items():
        log.info("k=%d AIC=%.4f", k, a)
    best = min(path, key=lambda k: path[k][0])
    return best, path[best][1]


# -- relative frailty variance --------------------------------------------


def _frailty(law_or_alpha, lam=None):
    if isinstance(law_or_alpha, FrailtyLaw):
        return law_or_alpha.alpha, law_or_alpha.lam
    return float(law_or_alpha), float(lam)


def _log_psi_family(alpha, lam, u):
    u = np.asarray(u, dtype=float)
    if np.any(u >= 0.5 / alpha):
        raise ValueError(f"cumulant generating function needs u < 1/(2 alpha) = {0.5 / alpha}")
    x = (1.0 / alpha) * (1.0 / alpha - 2.0 * u)
    # the common exp(-sqrt(x)) factor cancels in every ratio used below
    return log_psi_scaled(lam, x), log_psi_scaled(lam + 1.0, x), log_psi_scaled(lam + 2.0, x)


def cgf(alpha, lam, u):
    """``J(u) = log E exp(u Z)`` for Z ~ GIG(1/alpha, 1/alpha, lam)."""
    u = np.asarray(u, dtype=float)
    l0 = _log_psi_family(alpha, lam, u)[0]
    # sqrt(X) - 1/alpha, X = (1/alpha)(1/alpha - 2u)
    shift = -2.0 * u / (np.sqrt(1.0 - 2.0 * alpha * u) + 1.0)
    return (l0 - shift - log_psi_scaled(lam, 1.0 / alpha**2))[()]


def cgf_derivatives(alpha, lam, u):
    """First and second derivatives of ``J(u) = log L(-u)``.

    From the derivative rule ``d/dx Psi_nu = -Psi_{nu+1} / 2``:

        J'(u)  = Psi_{lam+1}(X) / (alpha Psi_lam(X))
        J''(u) = (Psi_{lam+2}/Psi_lam - (Psi_{lam+1}/Psi_lam)^2) / alpha^2

    with ``X = (1/alpha)(1/alpha - 2u)``.
    """
    l0, l1, l2 = _log_psi_family(alpha, lam, u)
    d1 = np.exp(l1 - l0) / alpha
    d2 = (np.exp(l2 - l0) - np.exp(2.0 * (l1 - l0))) / alpha**2
    return d1[()], d2[()]


def rfv(law, s, lam=None):
    """Relative frailty variance ``J''(-s/mu) / J'(-s/mu)^2`` with ``mu = E(Z)``.

    ``law`` is a GIG :class:`FrailtyLaw` or ``alpha`` together with ``lam``.
    """
    alpha, lam = _frailty(law, lam)
    mu = gig_moment(FrailtyLaw.gig(alpha, lam).gig_params(), 1.0)
    u = -np.asarray(s, dtype=float) / mu
    l0, l1, l2 = _log_psi_family(alpha, lam, u)
    # ratio minus one, kept accurate when heterogeneity is small
    return np.expm1(l2 + l0 - 2.0 * l1)[()]


def rfv_alpha_for_target(lam, target, bracket=(1e-6, 1e6)):
    """``alpha`` with ``RFV(0) = target`` for the GIG frailty of index ``lam``."""
    f = lambda r: rfv(math.exp(r), 0.0, lam) - target  # noqa: E731
    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    f_lo, f_hi = f(lo), f(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise ValueError(
            f"RFV(0) = {target} not bracketed for lam={lam}: "
            f"RFV(0) ranges over [{f_lo + target:.6g}, {f_hi + target:.6g}]"
        )
    r = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(r)


# -- nonparametric estimators ----------------------------------------------


def kaplan_meier(times, events):
    """Product-limit estimate as arrays ``(t, S)`` with ``t[0] = 0, S[0] = 1``.

    ``S[i]`` is the survival on ``[t[i], t[i+1])``; jumps happen only at
    observed failure times.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    if times.size == 0:
        raise ValueError("no observations")
    fail_times = np.unique(times[events])
    at_risk = times.size - np.searchsorted(np.sort(times), fail_times, side="left")
    deaths = np.array([np.sum(events & (times == t)) for t in fail_times], dtype=float)
    surv = np.cumprod(1.0 - deaths / at_risk)
    return np.concatenate(([0.0], fail_times)), np.concatenate(([1.0], surv))


def nelson_aalen(times, events):
    """Nelson-Aalen cumulative hazard as arrays ``(t, H)`` with ``H[0] = 0``."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    fail_times, deaths = np.unique(times[events], return_counts=True)
    at_risk = times.size - np.searchsorted(np.sort(times), fail_times, side="left")
    return np.concatenate(([0.0], fail_times)), np.concatenate(([0.0], np.cumsum(deaths / at_risk)))
