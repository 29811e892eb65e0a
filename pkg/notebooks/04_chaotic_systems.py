# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
# ---

# # Chaotic systems
#
# Each system is sampled at 100 points per dominant period and standardized.
# The largest Lyapunov exponent sets the time unit for the forecast metrics.

from symvolterra import chaos

for name in ("lorenz", "rossler"):
    system = chaos.get_system(name)
    period = chaos.estimate_period(system)
    lam = chaos.estimate_lyapunov(system)
    print(f"{name}: period {period:.4f}, dt {period / 100:.5f}, lambda {lam:.4f}")

traj = chaos.generate_trajectory("lorenz", 11000, seed=1)
print(len(traj), traj.points.mean(axis=0).round(12), traj.points.std(axis=0).round(12))
print("points per Lyapunov time:", 1 / (traj.lam * traj.dt))

# All shipped systems are polynomial of degree at most 4 in 3 or 4 variables.

for name, system in sorted(chaos.SYSTEMS.items()):
    print(f"{name:>13} dim={system.dim} degree={system.degree}")
