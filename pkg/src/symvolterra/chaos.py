"""Polynomial chaotic ODE systems: integration, periods, Lyapunov exponents.

Each system's vector field is stored as a coefficient table: a list of
terms ``(equation, coefficient, exponents)`` meaning
``dx_eq/dt += coefficient * prod_p x_p ** exponents[p]``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Optional

import numba
import numpy as np
import scipy.signal

PILOT_SAMPLES = 2**14
POINTS_PER_PERIOD = 100
DEFAULT_N_POINTS = 11000
DEFAULT_TRANSIENT_PERIODS = 1000


class IntegrationError(FloatingPointError):
    """Raised when an integration produces non-finite states."""


class NotChaoticWarning(UserWarning):
    """Largest Lyapunov exponent estimate is not positive."""


Term = tuple[int, object, tuple[int, ...]]


@dataclass(frozen=True)
class OdeSystem:
    """A polynomial vector field with default parameters.

    ``terms`` entries are ``(equation, coefficient, exponents)`` where the
    coefficient is a number, the name of a parameter (optionally prefixed
    with ``-``) or a callable of the parameter dict.
    """

    name: str
    dim: int
    terms: tuple[Term, ...]
    params: Mapping[str, float]
    initial_point: tuple[float, ...]
    pilot_dt: float
    ic_scale: float = 0.1
    reference_lambda: Optional[float] = None

    def __post_init__(self):
        if self.dim not in (3, 4):
            raise ValueError(f"{self.name}: dimension must be 3 or 4")
        if len(self.initial_point) != self.dim:
            raise ValueError(f"{self.name}: initial point has wrong dimension")
        for eq, _, exps in self.terms:
            if not 0 <= eq < self.dim or len(exps) != self.dim:
                raise ValueError(f"{self.name}: malformed term {(eq, exps)}")
        if self.degree > 4:
            raise ValueError(f"{self.name}: polynomial degree {self.degree} > 4")

    @property
    def degree(self) -> int:
        return max(sum(exps) for _, _, exps in self.terms)

    def table(self, params: Optional[Mapping[str, float]] = None):
        """Exponent matrix E (T x dim) and coefficient matrix C (T x dim)."""
        p = dict(self.params)
        if params:
            unknown = set(params) - set(p)
            if unknown:
                raise KeyError(f"{self.name}: unknown parameters {sorted(unknown)}")
            p.update(params)
        E = np.array([exps for _, _, exps in self.terms], dtype=np.int64)
        C = np.zeros((len(self.terms), self.dim))
        for t, (eq, coef, _) in enumerate(self.terms):
            C[t, eq] = _coefficient(coef, p)
        return E, C

    def rhs(self, params: Optional[Mapping[str, float]] = None) -> Callable:
        E, C = self.table(params)

        def f(x):
            x = np.asarray(x, dtype=float)
            return np.prod(x[..., None, :] ** E, axis=-1) @ C

        return f


def _coefficient(coef, params) -> float:
    if callable(coef):
        return float(coef(params))
    if isinstance(coef, str):
        sign = -1.0 if coef.startswith("-") else 1.0
        return sign * float(params[coef.lstrip("-")])
    return float(coef)


def _t(eq, coef, *exps):
    return (eq, coef, tuple(exps))


SYSTEMS: dict[str, OdeSystem] = {}


def _register(system: OdeSystem) -> None:
    SYSTEMS[system.name.lower()] = system


_register(OdeSystem(
    "Lorenz", 3,
    (
        _t(0, "-sigma", 1, 0, 0), _t(0, "sigma", 0, 1, 0),
        _t(1, "rho", 1, 0, 0), _t(1, -1, 1, 0, 1), _t(1, -1, 0, 1, 0),
        _t(2, 1, 1, 1, 0), _t(2, "-beta", 0, 0, 1),
    ),
    {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    (-9.8, -15.0, 20.5), pilot_dt=0.01, ic_scale=1.0, reference_lambda=0.906,
))
_register(OdeSystem(
    "Rossler", 3,
    (
        _t(0, -1, 0, 1, 0), _t(0, -1, 0, 0, 1),
        _t(1, 1, 1, 0, 0), _t(1, "a", 0, 1, 0),
        _t(2, "b", 0, 0, 0), _t(2, 1, 1, 0, 1), _t(2, "-c", 0, 0, 1),
    ),
    {"a": 0.2, "b": 0.2, "c": 5.7},
    (6.0, -4.0, 0.2), pilot_dt=0.05, ic_scale=0.5, reference_lambda=0.071,
))
_register(OdeSystem(
    "Chen", 3,
    (
        _t(0, "-a", 1, 0, 0), _t(0, "a", 0, 1, 0),
        _t(1, lambda p: p["c"] - p["a"], 1, 0, 0), _t(1, -1, 1, 0, 1), _t(1, "c", 0, 1, 0),
        _t(2, 1, 1, 1, 0), _t(2, "-b", 0, 0, 1),
    ),
    {"a": 35.0, "b": 3.0, "c": 28.0},
    (-10.0, 0.0, 37.0), pilot_dt=0.002, ic_scale=1.0,
))
_register(OdeSystem(
    "Halvorsen", 3,
    (
        _t(0, "-a", 1, 0, 0), _t(0, "-b", 0, 1, 0), _t(0, "-b", 0, 0, 1), _t(0, -1, 0, 2, 0),
        _t(1, "-a", 0, 1, 0), _t(1, "-b", 0, 0, 1), _t(1, "-b", 1, 0, 0), _t(1, -1, 0, 0, 2),
        _t(2, "-a", 0, 0, 1), _t(2, "-b", 1, 0, 0), _t(2, "-b", 0, 1, 0), _t(2, -1, 2, 0, 0),
    ),
    {"a": 1.4, "b": 4.0},
    (-6.4, 0.0, 0.0), pilot_dt=0.01, ic_scale=0.5,
))
_register(OdeSystem(
    "Dadras", 3,
    (
        _t(0, 1, 0, 1, 0), _t(0, "-p", 1, 0, 0), _t(0, "o", 0, 1, 1),
        _t(1, "r", 0, 1, 0), _t(1, -1, 1, 0, 1), _t(1, 1, 0, 0, 1),
        _t(2, "c", 1, 1, 0), _t(2, "-e", 0, 0, 1),
    ),
    {"p": 3.0, "o": 2.7, "r": 1.7, "c": 2.0, "e": 9.0},
    (1.1, 2.1, -2.0), pilot_dt=0.01, ic_scale=0.2,
))
_register(OdeSystem(
    "NoseHoover", 3,
    (
        _t(0, 1, 0, 1, 0),
        _t(1, -1, 1, 0, 0), _t(1, 1, 0, 1, 1),
        _t(2, "a", 0, 0, 0), _t(2, -1, 0, 2, 0),
    ),
    {"a": 1.5},
    (0.0, 6.0, 0.0), pilot_dt=0.05, ic_scale=0.05,
))
_register(OdeSystem(
    "HenonHeiles", 4,
    (
        _t(0, 1, 0, 0, 1, 0),
        _t(1, 1, 0, 0, 0, 1),
        _t(2, -1, 1, 0, 0, 0), _t(2, lambda p: -2.0 * p["lam"], 1, 1, 0, 0),
        _t(3, -1, 0, 1, 0, 0), _t(3, "-lam", 2, 0, 0, 0), _t(3, "lam", 0, 2, 0, 0),
    ),
    {"lam": 1.0},
    (0.0, -0.1, 0.55, 0.0), pilot_dt=0.05, ic_scale=0.01,
))
_register(OdeSystem(
    "HyperRossler", 4,
    (
        _t(0, -1, 0, 1, 0, 0), _t(0, -1, 0, 0, 1, 0),
        _t(1, 1, 1, 0, 0, 0), _t(1, "a", 0, 1, 0, 0), _t(1, 1, 0, 0, 0, 1),
        _t(2, "b", 0, 0, 0, 0), _t(2, 1, 1, 0, 1, 0),
        _t(3, "-c", 0, 0, 1, 0), _t(3, "d", 0, 0, 0, 1),
    ),
    {"a": 0.25, "b": 3.0, "c": 0.5, "d": 0.05},
    (-10.0, -6.0, 0.0, 10.1), pilot_dt=0.01, ic_scale=0.5,
))
_register(OdeSystem(
    "SprottA", 3,
    (
        _t(0, 1, 0, 1, 0),
        _t(1, -1, 1, 0, 0), _t(1, 1, 0, 1, 1),
        _t(2, 1, 0, 0, 0), _t(2, -1, 0, 2, 0),
    ),
    {},
    (0.0, 5.0, 0.0), pilot_dt=0.05, ic_scale=0.05,
))
_register(OdeSystem(
    "SprottB", 3,
    (
        _t(0, 1, 0, 1, 1),
        _t(1, 1, 1, 0, 0), _t(1, -1, 0, 1, 0),
        _t(2, 1, 0, 0, 0), _t(2, -1, 1, 1, 0),
    ),
    {},
    (0.4, 0.5, 0.3), pilot_dt=0.05, ic_scale=0.1,
))


def get_system(name: str) -> OdeSystem:
    try:
        return SYSTEMS[name.lower()]
    except KeyError:
        raise KeyError(
            f"unknown system {name!r}; choose from {', '.join(s.name for s in SYSTEMS.values())}"
        ) from None


def rk4_step(rhs: Callable, state, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    x = np.asarray(state, dtype=float)
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("RK4 step produced non-finite state")
    return out


@numba.njit(cache=True)
def _table_rhs(E, C, x, out):
    n_terms, dim = E.shape
    for p in range(dim):
        out[p] = 0.0
    for t in range(n_terms):
        m = 1.0
        for p in range(dim):
            for _ in range(E[t, p]):
                m *= x[p]
        for p in range(dim):
            if C[t, p] != 0.0:
                out[p] += C[t, p] * m


@numba.njit(cache=True)
def _rk4_table(E, C, x0, dt, n_steps, record_every):
    dim = x0.shape[0]
    n_rec = n_steps // record_every
    rec = np.empty((n_rec, dim))
    x = x0.copy()
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    r = 0
    for n in range(1, n_steps + 1):
        _table_rhs(E, C, x, k1)
        for p in range(dim):
            tmp[p] = x[p] + 0.5 * dt * k1[p]
        _table_rhs(E, C, tmp, k2)
        for p in range(dim):
            tmp[p] = x[p] + 0.5 * dt * k2[p]
        _table_rhs(E, C, tmp, k3)
        for p in range(dim):
            tmp[p] = x[p] + dt * k3[p]
        _table_rhs(E, C, tmp, k4)
        for p in range(dim):
            x[p] = x[p] + (dt / 6.0) * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p])
            if not np.isfinite(x[p]):
                return rec[:r], x, False
        if n % record_every == 0:
            rec[r] = x
            r += 1
    return rec, x, True


def integrate(system: OdeSystem, x0, dt: float, n_steps: int,
              params: Optional[Mapping[str, float]] = None,
              record_every: int = 1):
    """RK4-integrate ``system`` and return ``(samples, final_state)``.

    ``samples`` holds every ``record_every``-th state (the initial state is
    not included).
    """
    E, C = system.table(params)
    rec, x, ok = _rk4_table(E, C, np.asarray(x0, dtype=float), float(dt),
                            int(n_steps), int(record_every))
    if not ok:
        raise IntegrationError(f"{system.name}: integration blew up")
    return rec, x


def substeps(system: OdeSystem, dt: float) -> int:
    """RK4 sub-steps per sample so the internal step never exceeds the
    system's pilot step."""
    return max(1, math.ceil(dt / system.pilot_dt - 1e-9))


def dominant_period(samples, dt: float) -> float:
    """Period of the highest peak (DC excluded) of the averaged per-channel
    power spectrum."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    freqs, power = scipy.signal.periodogram(x, fs=1.0 / dt, axis=0, detrend="constant")
    totals = power.sum(axis=0)
    live = totals > 0
    if not np.any(live):
        raise ValueError("signal has no power outside DC")
    spectrum = (power[:, live] / totals[live]).mean(axis=1)
    k = int(np.argmax(spectrum))
    if k == 0 or spectrum[k] <= 0:
        raise ValueError("no spectral peak above DC")
    return float(1.0 / freqs[k])


def _params_key(params: Optional[Mapping[str, float]]):
    return tuple(sorted((params or {}).items()))


@lru_cache(maxsize=None)
def _period_cached(name: str, key) -> float:
    system = get_system(name)
    params = dict(key)
    dt = system.pilot_dt
    _, x = integrate(system, system.initial_point, dt, PILOT_SAMPLES, params)
    samples, _ = integrate(system, x, dt, PILOT_SAMPLES, params)
    return dominant_period(samples, dt)


def estimate_period(system: OdeSystem, params: Optional[Mapping[str, float]] = None) -> float:
    """Dominant period from a ``2**14``-sample pilot run (after an equally
    long transient) at the system's pilot step."""
    return _period_cached(system.name.lower(), _params_key(params))


def largest_lyapunov(step: Callable, x0, delta0: float = 1e-8,
                     n_renorm: int = 500, interval: float = 1.0,
                     n_transient: int = 0) -> float:
    """Two-trajectory (Benettin) estimate of the largest Lyapunov exponent.

    ``step(x)`` must advance a state by ``interval`` time units. The
    perturbed copy is renormalized to distance ``delta0`` after every call.
    """
    x = np.asarray(x0, dtype=float)
    for _ in range(n_transient):
        x = step(x)
    direction = np.ones_like(x) / math.sqrt(x.size)
    y = x + delta0 * direction
    total = 0.0
    for _ in range(n_renorm):
        x = step(x)
        y = step(y)
        d = np.linalg.norm(y - x)
        if d == 0.0 or not np.isfinite(d):
            raise IntegrationError("perturbation collapsed or blew up")
        total += math.log(d / delta0)
        y = x + (delta0 / d) * (y - x)
    return total / (n_renorm * interval)


@lru_cache(maxsize=None)
def _lyapunov_cached(name: str, key, n_renorm: int, delta0: float) -> float:
    system = get_system(name)
    params = dict(key)
    period = estimate_period(system, params)
    dt = period / POINTS_PER_PERIOD
    sub = substeps(system, dt)
    E, C = system.table(params)
    n = POINTS_PER_PERIOD * sub

    def step(x):
        _, out, ok = _rk4_table(E, C, x, dt / sub, n, n)
        if not ok:
            raise IntegrationError(f"{system.name}: integration blew up")
        return out

    return largest_lyapunov(step, system.initial_point, delta0=delta0,
                            n_renorm=n_renorm, interval=period, n_transient=100)


def estimate_lyapunov(system: OdeSystem, params: Optional[Mapping[str, float]] = None,
                      n_renorm: int = 2000, delta0: float = 1e-8) -> float:
    """Largest Lyapunov exponent (1/time), renormalizing once per period
    after a 100-period transient. Warns if the estimate is not positive."""
    lam = _lyapunov_cached(system.name.lower(), _params_key(params), n_renorm, delta0)
    if lam <= 0:
        warnings.warn(f"{system.name}: Lyapunov estimate {lam:.3g} is not positive",
                      NotChaoticWarning, stacklevel=2)
    return lam


@dataclass(frozen=True)
class Trajectory:
    """Standardized trajectory; ``points * std + mean`` recovers raw states."""

    system: str
    dt: float
    points: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    lam: float
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)

    @property
    def P(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def destandardize(self, points=None) -> np.ndarray:
        pts = self.points if points is None else np.asarray(points, dtype=float)
        return pts * self.std + self.mean


def standardize(raw):
    raw = np.asarray(raw, dtype=float)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    if np.any(std == 0):
        raise ValueError("cannot standardize a constant channel")
    return (raw - mean) / std, mean, std


def generate_trajectory(system: OdeSystem, n_points: int = DEFAULT_N_POINTS,
                        seed: int = 0, params: Optional[Mapping[str, float]] = None,
                        transient_periods: int = DEFAULT_TRANSIENT_PERIODS) -> Trajectory:
    """Sample ``n_points`` states at 100 points per dominant period after a
    ``transient_periods`` transient, then standardize per channel.

    The sampling interval is ``period / 100``; RK4 runs with
    :func:`substeps` internal steps per sample.
    """
    if isinstance(system, str):
        system = get_system(system)
    params = dict(params or {})
    period = estimate_period(system, params)
    dt = period / POINTS_PER_PERIOD
    lam = estimate_lyapunov(system, params)
    sub = substeps(system, dt)
    rng = np.random.default_rng(seed)
    x0 = np.asarray(system.initial_point) + system.ic_scale * rng.uniform(-1, 1, system.dim)
    _, x = integrate(system, x0, dt / sub, transient_periods * POINTS_PER_PERIOD * sub, params)
    raw, _ = integrate(system, x, dt / sub, n_points * sub, params, record_every=sub)
    points, mean, std = standardize(raw)
    return Trajectory(system.name, dt, points, mean, std, lam, seed, params)


def save_trajectory(traj: Trajectory, path) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (t, x1..xP at 17 significant digits) and a
    ``<stem>.json`` sidecar."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    t = traj.dt * np.arange(len(traj))
    header = ",".join(["t"] + [f"x{p + 1}" for p in range(traj.P)])
    np.savetxt(csv_path, np.column_stack([t, traj.points]), delimiter=",",
               header=header, comments="", fmt="%.16e")
    sidecar = {
        "system": traj.system,
        "params": traj.params,
        "dt": traj.dt,
        "lambda": traj.lam,
        "seed": traj.seed,
        "mean": traj.mean.tolist(),
        "std": traj.std.tolist(),
    }
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=1)
        fh.write("\n")
    return csv_path, json_path


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    with open(path.with_suffix(".json")) as fh:
        meta = json.load(fh)
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(
        meta["system"], float(meta["dt"]), table[:, 1:],
        np.array(meta["mean"]), np.array(meta["std"]), float(meta["lambda"]),
        meta.get("seed"), dict(meta.get("params") or {}),
    )
