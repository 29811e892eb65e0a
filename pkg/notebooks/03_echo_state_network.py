# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
# ---

# # Echo state network baseline
#
# A dense tanh reservoir with a leak rate, trained by centered ridge
# regression on the states after a washout.

import numpy as np

from symvolterra import chaos, esn, metrics
from symvolterra.esn import ESNConfig

traj = chaos.generate_trajectory("lorenz", 11000, seed=1)
data = traj.points
cfg = ESNConfig(n_reservoir=500, spectral_radius=0.9, input_strength=1.0, leak_rate=0.1,
                ridge=1e-1, seed=0)
model = esn.train(cfg, data[:6000], 1000)
print("spectral radius:", esn.spectral_radius(model.W))

# Two different initial states forget each other after the washout.

a = esn.resynchronize(model, data[:1000])
b = esn.resynchronize(model, data[:1000], x0=np.random.default_rng(2).uniform(-1, 1, 500))
print("state gap after 1000 steps:", np.abs(a - b).max())

# Closed-loop forecast from the end of the training data.

x = esn.resynchronize(model, data[:6000])
pred = esn.predict_closed_loop_esn(model, x, 200)
print("sMAPE over 200 steps:", metrics.smape(pred, data[6000:6200]))
