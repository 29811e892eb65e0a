import json
import math

import numpy as np
import pytest

from symvolterra import chaos, metrics
from symvolterra.chaos import OdeSystem


def test_rk4_trivial_cases():
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(chaos.rk4_step(lambda s: np.zeros_like(s), x, 0.3), x)
    np.testing.assert_array_equal(chaos.rk4_step(lambda s: s**2, x, 0.0), x)


def test_rk4_exponential_taylor_bound():
    out = chaos.rk4_step(lambda s: s, np.array([1.0]), 0.1)[0]
    # RK4 reproduces the Taylor series of e^0.1 up to the fourth-order term
    assert out == pytest.approx(sum(0.1**k / math.factorial(k) for k in range(5)), rel=1e-15)
    assert abs(out / math.exp(0.1) - 1) <= 1e-7


def test_rk4_order_four():
    def endpoint_error(n):
        x = np.array([1.0])
        for _ in range(n):
            x = chaos.rk4_step(lambda s: s, x, 1.0 / n)
        return abs(x[0] - math.e)

    ratio = endpoint_error(20) / endpoint_error(40)
    assert 8 <= ratio <= 32


def test_rk4_blowup_reported():
    with pytest.raises(chaos.IntegrationError):
        chaos.rk4_step(lambda s: s**2, np.array([1e200]), 1.0)


def test_table_integrator_matches_python_rk4():
    system = chaos.get_system("lorenz")
    rhs = system.rhs()
    x = np.array(system.initial_point)
    ref = x.copy()
    for _ in range(50):
        ref = chaos.rk4_step(rhs, ref, 0.005)
    samples, final = chaos.integrate(system, x, 0.005, 50, record_every=10)
    assert samples.shape == (5, 3)
    np.testing.assert_allclose(final, ref, rtol=1e-12)
    np.testing.assert_array_equal(samples[-1], final)


def test_system_validation():
    with pytest.raises(ValueError):
        OdeSystem("bad", 2, ((0, 1.0, (1, 0)),), {}, (0.0, 0.0), 0.01)
    with pytest.raises(ValueError):
        OdeSystem("bad", 3, ((0, 1.0, (5, 0, 0)),), {}, (0.0, 0.0, 0.0), 0.01)
    with pytest.raises(KeyError):
        chaos.get_system("nosuch")
    with pytest.raises(KeyError):
        chaos.get_system("lorenz").table({"nosuch": 1.0})


@pytest.mark.parametrize("name", sorted(chaos.SYSTEMS))
def test_shipped_systems_are_polynomial_and_chaotic(name):
    system = chaos.get_system(name)
    assert system.dim in (3, 4) and system.degree <= 4
    assert chaos.estimate_lyapunov(system) > 0


def test_dominant_period_of_sine():
    dt, f = 0.01, 1.7
    t = dt * np.arange(2**14)
    x = np.column_stack([np.sin(2 * np.pi * f * t), 0.3 * np.cos(2 * np.pi * f * t + 0.4)])
    period = chaos.dominant_period(x, dt)
    bin_width = 1.0 / (dt * t.size)
    assert abs(1.0 / period - f) <= bin_width
    with pytest.raises(ValueError):
        chaos.dominant_period(np.ones((1000, 3)), dt)


def test_lorenz_period():
    assert 0.7 <= chaos.estimate_period(chaos.get_system("lorenz")) <= 0.8


def variational_lyapunov(system, t_total=400.0, dt=0.01, transient=50.0):
    """Independent oracle: tangent-linear growth rate with per-step
    renormalization, using a finite-difference-free analytic Jacobian."""
    E, C = system.table()

    def jac(x):
        J = np.zeros((system.dim, system.dim))
        for e, c in zip(E, C):
            for q in range(system.dim):
                if e[q]:
                    de = e.copy()
                    de[q] -= 1
                    J[:, q] += c * e[q] * np.prod(x**de)
        return J

    f = system.rhs()

    def aug(s):
        x, v = s[:system.dim], s[system.dim:]
        return np.concatenate([f(x), jac(x) @ v])

    s = np.concatenate([system.initial_point, np.ones(system.dim) / math.sqrt(system.dim)])
    for _ in range(int(transient / dt)):
        s = chaos.rk4_step(aug, s, dt)
        s[system.dim:] /= np.linalg.norm(s[system.dim:])
    total = 0.0
    n = int(t_total / dt)
    for _ in range(n):
        s = chaos.rk4_step(aug, s, dt)
        norm = np.linalg.norm(s[system.dim:])
        total += math.log(norm)
        s[system.dim:] /= norm
    return total / (n * dt)


def test_lorenz_lyapunov_reference_and_oracle():
    lam = chaos.estimate_lyapunov(chaos.get_system("lorenz"))
    assert abs(lam - 0.906) <= 0.05
    assert abs(lam - variational_lyapunov(chaos.get_system("lorenz"))) <= 0.05


def test_rossler_lyapunov():
    assert abs(chaos.estimate_lyapunov(chaos.get_system("rossler")) - 0.071) <= 0.01


def test_contracting_system_has_negative_exponent():
    system = OdeSystem("decay", 3, tuple((p, -1.0, tuple(int(q == p) for q in range(3)))
                                         for p in range(3)), {}, (1.0, 2.0, 3.0), 0.01)

    def step(x):
        return chaos.integrate(system, x, 0.01, 100)[1]

    # the perturbation shrinks like exp(-t); both copies approach the origin
    lam = chaos.largest_lyapunov(step, np.array([1.0, 2.0, 3.0]), n_renorm=20, interval=1.0)
    assert lam < 0
    assert lam == pytest.approx(-1.0, abs=1e-3)


def test_generate_trajectory_properties(lorenz):
    assert len(lorenz) == 11000 and lorenz.P == 3
    np.testing.assert_allclose(lorenz.points.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(lorenz.points.std(axis=0), 1.0, atol=1e-10)
    assert np.max(np.abs(lorenz.points)) <= 6
    period = chaos.estimate_period(chaos.get_system("lorenz"))
    assert lorenz.dt * 100 == pytest.approx(period, rel=1e-12)
    raw = lorenz.destandardize()
    again, mean, std = chaos.standardize(raw)
    np.testing.assert_allclose(again, lorenz.points, atol=1e-12)
    np.testing.assert_allclose(raw, lorenz.points * std + mean, atol=1e-12)


def test_generate_is_deterministic(lorenz):
    again = chaos.generate_trajectory("lorenz", 11000, seed=1)
    assert again.points.tobytes() == lorenz.points.tobytes()
    other = chaos.generate_trajectory("lorenz", 11000, seed=2)
    assert not np.array_equal(other.points, lorenz.points)


def test_seeds_share_attractor_statistics(lorenz):
    other = chaos.generate_trajectory("lorenz", 11000, seed=2)
    rossler = chaos.generate_trajectory("rossler", 11000, seed=1)
    within = metrics.wasserstein_score(lorenz.points, other.points)
    between = metrics.wasserstein_score(lorenz.points, rossler.points)
    assert within <= 10 * between
    assert within < between


def test_save_load_round_trip(tmp_path, lorenz):
    csv_path, json_path = chaos.save_trajectory(lorenz, tmp_path / "traj")
    assert csv_path.read_text().splitlines()[0] == "t,x1,x2,x3"
    meta = json.loads(json_path.read_text())
    assert set(meta) == {"system", "params", "dt", "lambda", "seed", "mean", "std"}
    back = chaos.load_trajectory(csv_path)
    np.testing.assert_array_equal(back.points, lorenz.points)
    assert back.dt == lorenz.dt and back.lam == lorenz.lam
    np.testing.assert_array_equal(back.mean, lorenz.mean)
