import dataclasses
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gigfrail.baseline import WeibullBaseline
from gigfrail.distributions import FrailtyLaw, frailty_variance_standardized
from gigfrail.em import EmConfig, Optimizer, fit_em
from gigfrail.inference import (
    BootstrapResult,
    bootstrap_se,
    cgf,
    cgf_derivatives,
    fit_parametric_weibull,
    kaplan_meier,
    nelson_aalen,
    profile_argmax,
    profile_lambda,
    rfv,
    rfv_alpha_for_target,
    select_cuts_aic,
)
from gigfrail.likelihood import Dataset, ModelParams, observed_log_likelihood
from gigfrail.simulate import Scenario, generate

from oracles import central_diff, random_dataset

FIG_LAMBDAS = [-0.5, 0.0, 0.5, 1.0]


@pytest.fixture(scope="module")
def small_data():
    scn = Scenario(frailty=FrailtyLaw.gig(1.0, -0.5), m=40, cluster_size=2)
    return generate(scn, np.random.default_rng(77))


# -- parametric Weibull ------------------------------------------------------


def _hessian(f, v, h=1e-4):
    n = v.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei, ej = np.eye(n)[i] * h, np.eye(n)[j] * h
            H[i, j] = H[j, i] = (f(v + ei + ej) - f(v + ei - ej) - f(v - ei + ej) + f(v - ei - ej)) / (4 * h * h)
    return H


@pytest.fixture(scope="module")
def weibull_case():
    scn = Scenario(frailty=FrailtyLaw.gig(1.0, -0.5), m=500, cluster_size=2)
    data = generate(scn, np.random.default_rng(2025))
    return scn, data, fit_parametric_weibull(data, -0.5)


def test_weibull_recovers_truth(weibull_case):
    scn, data, fit = weibull_case
    assert fit.converged
    p = fit.params

    def ll(v):
        return observed_log_likelihood(
            ModelParams(v[:2], WeibullBaseline(math.exp(v[2]), math.exp(v[3])), math.exp(v[4]), -0.5), data)

    v = np.concatenate((p.beta, [math.log(p.baseline.sigma), math.log(p.baseline.gamma), math.log(p.alpha)]))
    se = np.sqrt(np.diag(np.linalg.inv(-_hessian(ll, v))))
    assert abs(math.log(p.baseline.sigma) - math.log(0.25)) < 3 * se[2]
    assert abs(math.log(p.baseline.gamma) - math.log(2.0)) < 3 * se[3]
    assert np.all(np.abs(p.beta - np.array(scn.beta_true)) < 3 * se[:2])


def test_weibull_mle_dominates_truth(weibull_case):
    scn, data, fit = weibull_case
    truth = ModelParams(scn.beta_true, WeibullBaseline(0.25, 2.0), 1.0, -0.5)
    assert fit.loglik >= observed_log_likelihood(truth, data)


def test_weibull_simplex_agrees(weibull_case):
    _, data, fit = weibull_case
    alt = fit_parametric_weibull(data, -0.5, EmConfig(lam=-0.5, optimizer=Optimizer.SIMPLEX))
    assert alt.loglik == pytest.approx(fit.loglik, abs=1e-4)


def _weibull_no_frailty_mle(data):
    from scipy import optimize

    def negll(v):
        beta, s, g = v[:2], math.exp(v[2]), math.exp(v[3])
        lp = data.covariates @ beta
        t = data.time
        return -np.sum(data.status * (math.log(s * g) + (g - 1) * np.log(t) + lp) - s * t**g * np.exp(lp))

    return optimize.minimize(negll, np.zeros(4), method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000}).x


def test_weibull_no_frailty_limit():
    scn = Scenario(frailty=FrailtyLaw.gamma(1e-10), m=400, cluster_size=2)
    data = generate(scn, np.random.default_rng(8))
    fit = fit_parametric_weibull(data, -0.5)
    ref = _weibull_no_frailty_mle(data)
    p = fit.params
    assert fit.standardized_frailty_variance < 0.05
    np.testing.assert_allclose(p.beta, ref[:2], atol=0.02)
    assert math.log(p.baseline.gamma) == pytest.approx(ref[3], abs=0.02)
    assert math.log(p.baseline.sigma) == pytest.approx(ref[2], abs=0.03)


# -- bootstrap ------------------------------------------------------------------


def test_bootstrap_single_replicate_is_degenerate(small_data):
    res = bootstrap_se(small_data, EmConfig(lam=-0.5, k_cuts=2), B=1, seed=3)
    assert isinstance(res, BootstrapResult)
    assert res.degenerate
    assert res.n_resamples == 1
    assert all(v == 0.0 for v in res.standard_errors.values())


def test_bootstrap_deterministic(small_data):
    cfg = EmConfig(lam=-0.5, k_cuts=2)
    a = bootstrap_se(small_data, cfg, B=4, seed=11)
    b = bootstrap_se(small_data, cfg, B=4, seed=11)
    assert a == b
    assert a.n_failed + len(a.replicates) == 4
    assert not a.degenerate


def test_bootstrap_relabel_invariant(small_data):
    cfg = EmConfig(lam=-0.5, k_cuts=2)
    relabeled = Dataset.from_arrays(small_data.time, small_data.status, small_data.covariates,
                                    [f"c{1000 - c}" for c in small_data.cluster])
    a = bootstrap_se(small_data, cfg, B=3, seed=5)
    b = bootstrap_se(relabeled, cfg, B=3, seed=5)
    assert a.standard_errors == b.standard_errors


def test_bootstrap_rejects_zero_resamples(small_data):
    with pytest.raises(ValueError):
        bootstrap_se(small_data, B=0)


def test_bootstrap_weibull_baseline(small_data):
    res = bootstrap_se(small_data, EmConfig(lam=-0.5), B=3, seed=1, baseline="weibull")
    assert "sigma" in res.standard_errors and "gamma" in res.standard_errors


@pytest.mark.slow
def test_bootstrap_se_matches_monte_carlo_sd():
    scn = Scenario(frailty=FrailtyLaw.gig(1.0, -0.5), m=80, cluster_size=2)
    cfg = EmConfig(lam=-0.5, k_cuts=3, tol=1e-5, max_iter=3000)
    children = np.random.SeedSequence(404).spawn(101)
    b1 = [fit_em(generate(scn, np.random.default_rng(c)), cfg).params.beta[0] for c in children[1:]]
    mc_sd = np.std(b1, ddof=1)
    res = bootstrap_se(generate(scn, np.random.default_rng(children[0])), cfg, B=100, seed=9)
    assert res.standard_errors["beta_x1"] == pytest.approx(mc_sd, rel=0.3)


# -- profile and cut selection ---------------------------------------------------


def test_profile_single_point_matches_fit(small_data):
    cfg = EmConfig(k_cuts=3)
    (pt,) = profile_lambda(small_data, [0.5], cfg)
    fit = fit_em(small_data, dataclasses.replace(cfg, lam=0.5))
    assert pt.lam == 0.5
    assert pt.loglik == fit.loglik
    np.testing.assert_array_equal(pt.params.beta, fit.params.beta)


def test_profile_argmax_dominates(small_data):
    pts = profile_lambda(small_data, [-1.0, 0.0, 1.0], EmConfig(k_cuts=3))
    best = profile_argmax(pts)
    assert len(pts) == 3
    assert all(p.loglik <= best.loglik for p in pts)


def test_profile_rejects_empty_grid(small_data):
    with pytest.raises(ValueError):
        profile_lambda(small_data, [])


def test_select_cuts_single_k(small_data):
    k, fit = select_cuts_aic(small_data, 0.0, [4])
    assert k == 4
    assert fit.params.baseline.cuts.size == 4


def test_select_cuts_minimizes_aic(small_data):
    k, fit = select_cuts_aic(small_data, 0.0, [2, 3, 5])
    p = small_data.n_covariates
    # beta, k + 1 rates and alpha
    assert fit.n_params == p + k + 2
    assert fit.aic == pytest.approx(2 * (p + k + 2) - 2 * fit.loglik)
    for other in (2, 3, 5):
        alt = fit_em(small_data, EmConfig(lam=0.0, k_cuts=other))
        assert fit.aic <= alt.aic + 1e-9


# -- cumulant generating function and RFV ---------------------------------------------


@pytest.mark.parametrize("lam", [-2.0, -0.5, 0.0, 1.0, 3.5])
@pytest.mark.parametrize("alpha", [0.2, 1.0, 4.0])
def test_cgf_zero_at_origin(lam, alpha):
    assert cgf(alpha, lam, 0.0) == pytest.approx(0.0, abs=1e-13)


@pytest.mark.parametrize("alpha", [0.3, 1.0, 2.0])
def test_cgf_ig_closed_form(alpha):
    u = np.linspace(-5, 0.49 / alpha, 30)
    np.testing.assert_allclose(cgf(alpha, -0.5, u), (1 - np.sqrt(1 - 2 * alpha * u)) / alpha, rtol=1e-11, atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(0.05, 5), lam=st.floats(-3, 3), frac=st.floats(-10, 0.8))
def test_cgf_derivatives_finite_differences(alpha, lam, frac):
    u = frac * 0.5 / alpha
    h = 1e-3 * max(0.5 / alpha - u, 1e-2) if u > 0 else 1e-3 * (0.5 / alpha)
    d1, d2 = cgf_derivatives(alpha, lam, u)
    assert d1 == pytest.approx(central_diff(lambda v: cgf(alpha, lam, v), u, h), rel=1e-5)
    assert d2 == pytest.approx(central_diff(lambda v: cgf(alpha, lam, v), u, h, order=2), rel=1e-4)


def _printed_derivatives(alpha, lam, s):
    """Long-hand first and second derivatives of log L(-s), term by term, at 40 digits."""
    with mpmath.workdps(40):
        a = 1 / mpmath.mpf(alpha)
        s = mpmath.mpf(s)
        lam = mpmath.mpf(lam)
        X = a * (a - 2 * s)
        r = mpmath.sqrt(X)
        K = lambda nu: mpmath.besselk(lam + nu, r)  # noqa: E731
        d1 = a / (2 * X**1.5 * K(0)) * (X * K(-1) + 2 * lam * r * K(0) + X * K(1))
        brace = (
            -X**1.5 * K(-1) ** 2
            + 2 * X * (K(0) - r * K(1)) * K(-1)
            - 4 * a * s * r * K(0) ** 2
            + 8 * lam * r * K(0) ** 2
            + 2 * a**2 * r * K(0) ** 2
            + 2 * a * s * r * K(1) ** 2
            - a**2 * r * K(1) ** 2
            + X**1.5 * K(-2) * K(0)
            + 2 * a**2 * K(0) * K(1)
            - 4 * a * s * K(0) * K(1)
            - 2 * a * s * r * K(0) * K(2)
            + a**2 * r * K(0) * K(2)
        )
        d2 = brace / (4 * (a - 2 * s) ** 2 * r * K(0) ** 2)
        return float(d1), float(d2)


@pytest.mark.parametrize("lam", [-1.3, -0.5, 0.0, 0.5, 1.0, 2.2])
@pytest.mark.parametrize("alpha", [0.3, 1.0, 2.5])
@pytest.mark.parametrize("frac", [-4.0, -0.5, 0.0, 0.6])
def test_cgf_derivatives_match_long_hand_expressions(lam, alpha, frac):
    u = frac * 0.5 / alpha
    d1, d2 = cgf_derivatives(alpha, lam, u)
    p1, p2 = _printed_derivatives(alpha, lam, u)
    assert d1 == pytest.approx(p1, rel=1e-10)
    assert d2 == pytest.approx(p2, rel=1e-8)


@pytest.mark.parametrize("lam", [-2.0, -0.5, 0.0, 0.5, 1.0, 3.0])
@pytest.mark.parametrize("alpha", [0.05, 0.7, 1.0, 6.0])
def test_rfv_at_zero_is_standardized_variance(lam, alpha):
    law = FrailtyLaw.gig(alpha, lam)
    assert rfv(law, 0.0) == pytest.approx(frailty_variance_standardized(law), rel=1e-11)


def test_rfv_definition_from_derivatives():
    law = FrailtyLaw.gig(0.8, 0.5)
    from gigfrail.distributions import gig_moment
    mu = gig_moment(law.gig_params(), 1.0)
    for s in (0.0, 0.5, 3.0, 9.0):
        d1, d2 = cgf_derivatives(0.8, 0.5, -s / mu)
        assert rfv(law, s) == pytest.approx(d2 / d1**2, rel=1e-12)


def test_rfv_accepts_alpha_and_lambda():
    assert rfv(0.8, 2.0, lam=0.5) == rfv(FrailtyLaw.gig(0.8, 0.5), 2.0)


def test_rfv_ig_closed_form():
    # IG: J'(u) = (1 - 2 alpha u)^(-1/2), J'' = alpha (1 - 2 alpha u)^(-3/2), so RFV(s) = alpha / sqrt(1 + 2 alpha s)
    s = np.linspace(0, 10, 21)
    np.testing.assert_allclose(rfv(0.7, s, lam=-0.5), 0.7 / np.sqrt(1 + 1.4 * s), rtol=1e-12)


def test_rfv_alpha_ig():
    assert rfv_alpha_for_target(-0.5, 0.7) == pytest.approx(0.7, abs=1e-8)


@pytest.mark.parametrize("lam", [-3.0, -0.5, 0.0, 0.5, 1.0, 2.5])
def test_rfv_alpha_probe(lam):
    target = rfv(1.0, 0.0, lam=lam)
    assert rfv_alpha_for_target(lam, target) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("lam", [-3.0, -0.5, 0.0, 0.5, 1.0])
@pytest.mark.parametrize("target", [0.05, 0.7])
def test_rfv_alpha_round_trip(lam, target):
    a = rfv_alpha_for_target(lam, target)
    assert abs(rfv(a, 0.0, lam=lam) - target) < 1e-6


def test_rfv_zero_bounded_for_positive_lambda():
    # alpha -> inf gives a gamma(lam) limit with Var/E^2 = 1/lam, so 0.7 is out of reach at lam = 2.5
    assert rfv(1e6, 0.0, lam=2.5) == pytest.approx(1 / 2.5, rel=1e-4)
    with pytest.raises(ValueError, match="not bracketed"):
        rfv_alpha_for_target(2.5, 0.7)


def test_rfv_alpha_unreachable_target():
    with pytest.raises(ValueError, match="not bracketed"):
        rfv_alpha_for_target(0.0, 0.7, bracket=(1e-6, 1e-3))


def test_rfv_curves_decrease_and_ig_lowest():
    s = np.linspace(0, 10, 1001)
    curves = {lam: rfv(rfv_alpha_for_target(lam, 0.7), s, lam=lam) for lam in FIG_LAMBDAS}
    for c in curves.values():
        assert c[0] == pytest.approx(0.7, abs=1e-8)
        assert np.all(np.diff(c) < 0)
    late = s >= 2
    assert np.all(curves[-0.5][late] < curves[1.0][late])


def test_rfv_domain():
    with pytest.raises(ValueError):
        cgf(1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        rfv(1.0, -10.0, lam=0.0)


# -- Kaplan-Meier and Nelson-Aalen ---------------------------------------------------


def test_km_no_censoring():
    t, S = kaplan_meier([1, 2, 3], [1, 1, 1])
    np.testing.assert_allclose(t, [0, 1, 2, 3])
    np.testing.assert_allclose(S, [1, 2 / 3, 1 / 3, 0])


def test_km_all_censored():
    t, S = kaplan_meier([1, 2, 3], [0, 0, 0])
    np.testing.assert_array_equal(t, [0.0])
    np.testing.assert_array_equal(S, [1.0])


def test_km_ties_and_censoring():
    # at t=2 one death and one censoring tie: the censored subject is still at risk
    t, S = kaplan_meier([1, 2, 2, 3, 4], [1, 1, 0, 1, 0])
    np.testing.assert_allclose(t, [0, 1, 2, 3])
    np.testing.assert_allclose(S, [1, 4 / 5, 4 / 5 * 3 / 4, 4 / 5 * 3 / 4 * 1 / 2])


def _km_brute(times, events, at):
    s = 1.0
    for u in sorted(set(times[events == 1])):
        if u > at:
            break
        n = np.sum(times >= u)
        d = np.sum((times == u) & (events == 1))
        s *= 1 - d / n
    return s


@settings(max_examples=60, deadline=None)
@given(data=st.lists(st.tuples(st.integers(1, 12), st.integers(0, 1)), min_size=1, max_size=25))
def test_km_brute_force(data):
    times = np.array([d[0] for d in data], float)
    events = np.array([d[1] for d in data])
    t, S = kaplan_meier(times, events)
    for probe in np.arange(0, 13.5, 0.5):
        i = np.searchsorted(t, probe, side="right") - 1
        assert S[i] == pytest.approx(_km_brute(times, events, probe), abs=1e-12)


def test_km_rejects_empty():
    with pytest.raises(ValueError):
        kaplan_meier([], [])


def test_nelson_aalen():
    t, H = nelson_aalen([1, 2, 2, 3, 4], [1, 1, 0, 1, 0])
    np.testing.assert_allclose(t, [0, 1, 2, 3])
    np.testing.assert_allclose(H, [0, 1 / 5, 1 / 5 + 1 / 4, 1 / 5 + 1 / 4 + 1 / 2])


def test_nelson_aalen_exponential_rate():
    rng = np.random.default_rng(0)
    x = rng.exponential(1 / 0.5, 20000)
    c = rng.exponential(1 / 0.2, 20000)
    t, H = nelson_aalen(np.minimum(x, c), (x <= c).astype(int))
    i = np.searchsorted(t, 2.0) - 1
    assert H[i] == pytest.approx(1.0, abs=0.03)


def test_km_on_dataset_arrays():
    data = random_dataset(np.random.default_rng(1), 20, 3)
    t, S = kaplan_meier(data.time, data.status)
    assert S[0] == 1.0 and np.all(np.diff(S) <= 0) and np.all(np.diff(t) > 0)
