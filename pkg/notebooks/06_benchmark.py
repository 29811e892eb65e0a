# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
# ---

# # Benchmark protocol
#
# One task: grid search on a validation trajectory, retrain the winner on a
# second trajectory, then score 100 short forecasts and one long rollout.
# A reduced ESN grid keeps this script to about a minute.

import numpy as np

from symvolterra import chaos, harness

grid = harness.GridSpec(esn_rho=(0.9, 1.1), esn_g=(0.4, 1.0), esn_eps=(0.1, 0.7),
                        esn_lambda=(1e-7, 1e-1))
task = harness.run_task("lorenz", 0, grid)
for family, trial in task.selected.items():
    print(family, trial.params, {k: trial.test[k] for k in ("vpt_mean", "smape_mean",
                                                            "wasserstein")})

# Training time with one BLAS thread, on the test trajectory's pieces.

test_traj = chaos.generate_trajectory("lorenz", 11000, seed=task.seeds["trajectory_test"])
warm, train, _ = harness.split(test_traj)
tn = harness.time_training("tn", task.selected["tn"].params, train, repeats=3)
es = harness.time_training("esn", task.selected["esn"].params, np.vstack([warm, train]),
                           repeats=3, n_warmup=len(warm))
print(f"TN {tn.median:.3f} s, ESN {es.median:.3f} s")
