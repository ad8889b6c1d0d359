"""Fitting clustered survival data with a GIG frailty.

Simulate pairs sharing a gamma frailty, fit the piecewise-exponential model
by EM for the four named cases, compare with a Weibull baseline fitted by
direct maximization, and get cluster bootstrap standard errors.
"""

import numpy as np

from gigfrail.distributions import FrailtyLaw, gig_moment
from gigfrail.em import EmConfig, fit_em
from gigfrail.inference import bootstrap_se, fit_parametric_weibull, kaplan_meier
from gigfrail.simulate import Scenario, generate

rng = np.random.default_rng(2024)
scn = Scenario(frailty=FrailtyLaw.gamma(1.0), m=200, cluster_size=2)
data = generate(scn, rng)
print(f"{data.n_obs} subjects in {data.n_clusters} clusters, "
      f"{1 - data.status.mean():.1%} censored")

# Kaplan-Meier by the binary covariate
for g in (0.0, 1.0):
    mask = data.covariates[:, 0] == g
    t, S = kaplan_meier(data.time[mask], data.status[mask])
    print(f"x1={g:.0f}: S(1) = {S[np.searchsorted(t, 1.0, side='right') - 1]:.3f}")

# EM fits; the truth is beta = (1.5, -1.0) and Var(Z)/E(Z)^2 = 1.
# PHYP may stop at the iteration cap: as alpha grows the lam = 1 law tends to
# the gamma(1) frailty that generated the data, so alpha drifts upward.
print("\n name   beta1    beta2     var   alpha    loglik  iters")
for name, lam in {"IG": -0.5, "HYP": 0.0, "RIG": 0.5, "PHYP": 1.0}.items():
    fit = fit_em(data, EmConfig(lam=lam, k_cuts=10, max_iter=5000))
    b = fit.params.beta
    print(f"{name:>5} {b[0]:7.3f}  {b[1]:7.3f}  {fit.standardized_frailty_variance:6.3f}"
          f"  {fit.params.alpha:6.3f}  {fit.loglik:8.2f}  {fit.n_iter:5d}")

# Weibull baseline, maximized directly. Only IG has E Z = 1, so for RIG the
# scale to compare with the true 0.25 is sigma * E(Z).
wb = fit_parametric_weibull(data, 0.5)
ez = gig_moment(wb.params.prior(), 1.0)
print(f"\nWeibull RIG: sigma * E(Z) = {wb.params.baseline.sigma * ez:.3f} (true 0.25), "
      f"gamma = {wb.params.baseline.gamma:.3f} (true 2)")

# Hazard ratios and a small bootstrap (use a few hundred resamples in practice)
rig = fit_em(data, EmConfig(lam=0.5, k_cuts=10, max_iter=5000))
boot = bootstrap_se(data, EmConfig(lam=0.5, k_cuts=10, max_iter=5000, tol=1e-5), B=20, seed=1)
for j, name in enumerate(data.covariate_names):
    b = rig.params.beta[j]
    se = boot.standard_errors[f"beta_{name}"]
    print(f"{name}: HR = {np.exp(b):.3f}, beta = {b:.3f} (bootstrap SE {se:.3f})")
print(f"{boot.n_failed} of {boot.n_resamples} resamples excluded")
