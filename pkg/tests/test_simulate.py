import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gigfrail.distributions import FrailtyLaw
from gigfrail.em import EmConfig, fit_em
from gigfrail.inference import nelson_aalen
from gigfrail.simulate import SUMMARY_COLUMNS, Scenario, generate, run_study, write_summary_csv

NEAR_ONE = FrailtyLaw.gamma(1e-12)


def test_scenario_defaults():
    scn = Scenario()
    assert scn.event_weibull == (0.25, 2.0)
    assert scn.censor_weibull == (0.05, 2.0)
    assert scn.beta_true == (1.5, -1.0)
    assert scn.frailty.alpha == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [dict(m=0), dict(cluster_size=0), dict(cluster_size=[2, 3]), dict(event_weibull=(0.0, 2.0)),
     dict(censor_weibull=(0.05, -1.0)), dict(beta_true=(1.0,))],
)
def test_scenario_validation(kwargs):
    with pytest.raises(ValueError):
        Scenario(**kwargs)


def test_unit_frailty_gives_weibull_times():
    scn = Scenario(frailty=NEAR_ONE, m=4000, cluster_size=1, beta_true=(0.0, 0.0),
                   censor_weibull=(1e-12, 2.0))
    data = generate(scn, np.random.default_rng(0))
    assert data.status.all()
    cdf = lambda t: 1.0 - np.exp(-0.25 * t**2)  # noqa: E731
    assert stats.kstest(data.time, cdf).pvalue > 0.01


def test_conditional_cumulative_hazard():
    # x1 = 1 records only: Nelson-Aalen should follow exp(1.5 x1 - x2) 0.25 t^2 on average over x2
    scn = Scenario(frailty=NEAR_ONE, m=60000, cluster_size=1, beta_true=(1.5, 0.0))
    data = generate(scn, np.random.default_rng(1))
    sel = data.covariates[:, 0] == 1.0
    t, H = nelson_aalen(data.time[sel], data.status[sel])
    for probe in (0.5, 1.0, 1.5):
        i = np.searchsorted(t, probe) - 1
        assert H[i] == pytest.approx(math.exp(1.5) * 0.25 * probe**2, rel=0.05)


def _expected_censoring(scn):
    # same Weibull shape for T and C: P(C < T | Z, x) = s_c / (s_c + s Z exp(x'beta))
    s, g = scn.event_weibull
    s_c, g_c = scn.censor_weibull
    assert g == g_c
    b1, b2 = scn.beta_true
    rng = np.random.default_rng(99)
    from gigfrail.distributions import sample_frailty
    z = sample_frailty(scn.frailty, rng, size=400_000)

    def given_x1(x1):
        def inner(x2):
            return np.mean(s_c / (s_c + s * z * math.exp(b1 * x1 + b2 * x2)))
        return 0.5 * integrate.quad(inner, -1, 1, epsrel=1e-8)[0]

    return 0.5 * (given_x1(0.0) + given_x1(1.0))


def test_censoring_fraction_matches_its_exact_value():
    scn = Scenario()
    expected = _expected_censoring(scn)
    fractions = [1 - generate(scn, np.random.default_rng(c)).status.mean()
                 for c in np.random.SeedSequence(5).spawn(200)]
    se = np.std(fractions, ddof=1) / math.sqrt(len(fractions))
    assert np.mean(fractions) == pytest.approx(expected, abs=4 * se + 2e-3)


def test_generate_deterministic():
    scn = Scenario(m=30, cluster_size=3)
    a = generate(scn, np.random.default_rng(4))
    b = generate(scn, np.random.default_rng(4))
    np.testing.assert_array_equal(a.time, b.time)
    np.testing.assert_array_equal(a.status, b.status)
    np.testing.assert_array_equal(a.covariates, b.covariates)


def test_variable_cluster_sizes():
    data = generate(Scenario(m=3, cluster_size=[1, 4, 2]), np.random.default_rng(0))
    np.testing.assert_array_equal(data.cluster_sizes, [1, 4, 2])


laws = st.sampled_from([
    FrailtyLaw.gamma(0.5), FrailtyLaw.gig(1.0, -0.5), FrailtyLaw.gig(2.0, 0.7),
    FrailtyLaw.generalized_exponential(1.5), FrailtyLaw.lognormal(0.5),
])


@settings(max_examples=40, deadline=None)
@given(law=laws, m=st.integers(1, 30), size=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_generated_dataset_invariants(law, m, size, seed):
    scn = Scenario(frailty=law, m=m, cluster_size=size, censor_weibull=(1e-3, 2.0))
    data = generate(scn, np.random.default_rng(seed))
    assert data.n_clusters == m and data.n_obs == m * size
    assert np.all(data.time > 0) and np.all(np.isfinite(data.time))
    assert set(np.unique(data.status)) <= {0, 1}
    assert np.all(np.isin(data.covariates[:, 0], [0.0, 1.0]))
    assert np.all(np.abs(data.covariates[:, 1]) <= 1.0)


# -- study harness -------------------------------------------------------------


@pytest.fixture(scope="module")
def small_study():
    scn = Scenario(m=40, cluster_size=2, seed=12, name="small")
    cfg = EmConfig(k_cuts=3, max_iter=3000)
    return scn, cfg, run_study(scn, [(-0.5, 3), (0.5, 2)], 4, cfg, return_estimates=True)


def test_study_layout(small_study):
    _, _, (rows, extra) = small_study
    assert [(r.lam, r.k, r.param) for r in rows] == [
        (-0.5, 3, "beta1"), (-0.5, 3, "beta2"), (-0.5, 3, "var"),
        (0.5, 2, "beta1"), (0.5, 2, "beta2"), (0.5, 2, "var"),
    ]
    assert all(r.n_ok + r.n_fail == 4 for r in rows)
    assert extra["censoring"].shape == (4,)


def test_study_deterministic(small_study):
    scn, cfg, (rows, _) = small_study
    again = run_study(scn, [(-0.5, 3), (0.5, 2)], 4, cfg)
    assert again == rows


def test_rmse_at_least_bias(small_study):
    scn, _, (rows, _) = small_study
    truth = {"beta1": 1.5, "beta2": -1.0, "var": scn.true_variance}
    for r in rows:
        assert r.rmse >= abs(r.mean - truth[r.param]) - 1e-15


def test_study_replica_matches_direct_fit(small_study):
    scn, cfg, (_, extra) = small_study
    child = np.random.SeedSequence(scn.seed).spawn(4)[2]
    data = generate(scn, np.random.default_rng(child))
    fit = fit_em(data, EmConfig(lam=0.5, k_cuts=2, max_iter=3000))
    est = extra["estimates"][1][2]
    assert est == (fit.params.beta[0], fit.params.beta[1], fit.standardized_frailty_variance)


def test_single_replica_rmse_is_abs_error():
    # seed 5 gives an interior maximum; some small samples push alpha to the boundary
    scn = Scenario(m=30, cluster_size=2, seed=5)
    cfg = EmConfig(k_cuts=2, max_iter=3000)
    rows, extra = run_study(scn, [(0.0, 2)], 1, cfg, return_estimates=True)
    est = extra["estimates"][0][0]
    truth = (1.5, -1.0, 1.0)
    for r, e, t in zip(rows, est, truth):
        assert r.rmse == abs(e - t)
        assert r.mean == e


def test_study_rejects_zero_replicas():
    with pytest.raises(ValueError):
        run_study(Scenario(m=5), [(0.0, 2)], 0)


def test_nonconverged_replicas_are_counted():
    scn = Scenario(m=30, cluster_size=2, seed=1)
    rows = run_study(scn, [(0.0, 2)], 2, EmConfig(max_iter=1))
    assert all(r.n_ok == 0 and r.n_fail == 2 for r in rows)
    assert all(math.isnan(r.mean) for r in rows)


def test_summary_csv(small_study):
    _, _, (rows, _) = small_study
    buf = io.StringIO()
    write_summary_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(SUMMARY_COLUMNS)
    assert len(lines) == 1 + len(rows)
    first = lines[1].split(",")
    assert first[0] == "small" and float(first[4]) == rows[0].mean
