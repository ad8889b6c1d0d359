"""Choosing lambda by profile likelihood, and the number of cuts by AIC."""

import numpy as np

from gigfrail.distributions import FrailtyLaw
from gigfrail.em import EmConfig
from gigfrail.inference import profile_argmax, profile_lambda, select_cuts_aic
from gigfrail.simulate import Scenario, generate

# 1000 pairs with an IG frailty (lambda = -0.5)
scn = Scenario(frailty=FrailtyLaw.gig(1.0, -0.5), m=1000, cluster_size=2)
data = generate(scn, np.random.default_rng(7))

grid = np.arange(-2.0, 2.01, 0.5)
points = profile_lambda(data, grid, EmConfig(k_cuts=10, max_iter=5000))
for p in points:
    print(f"lambda {p.lam:+.1f}: loglik {p.loglik:10.3f}  alpha {p.params.alpha:.3f}")
print("profile maximum at lambda =", profile_argmax(points).lam)

# AIC over a few cut counts, at the IG index
k, fit = select_cuts_aic(data, -0.5, [3, 6, 10, 15], EmConfig(max_iter=5000))
print(f"AIC picks k = {k} (AIC {fit.aic:.2f})")
