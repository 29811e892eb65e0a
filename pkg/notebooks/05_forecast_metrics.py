# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
# ---

# # Forecast metrics
#
# Short-term accuracy uses sMAPE over one Lyapunov time and the valid
# prediction time. Long-term statistics compare normalized Welch spectra
# through the squared 2-Wasserstein distance of their quantile functions.

import numpy as np

from symvolterra import chaos, harness, metrics

traj = chaos.generate_trajectory("lorenz", 11000, seed=1)
pts = traj.points
print("sMAPE hand example:", metrics.smape([[0, 1], [0, 1]], [[1, 0], [0, 1]]))
print("mean pairwise distance of 0, 1, 3:", metrics.mean_pairwise_distance([0.0, 1.0, 3.0]))

model = harness.fit_tn(pts[1000:6000], {"M": 3, "D": 3})
e_bar = metrics.mean_pairwise_distance(pts[:6000])
res = harness.evaluate_short_term(model, pts[5000:], traj.lam, traj.dt, e_bar, n_ics=10)
print(res.summary())

rollout = harness.forecast(model, pts[1000:6000], 5000)
noise = np.random.default_rng(0).standard_normal((5000, 3))
print("spectral distance, TN:", metrics.wasserstein_score(rollout, pts[6000:]))
print("spectral distance, noise:", metrics.wasserstein_score(noise, pts[6000:]))
