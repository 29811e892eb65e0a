"""Experimental protocol: splits, grid search, test metrics and timing.

A task is one chaotic system at one top-level seed. Two standardized
trajectories are generated per task. The first is split into
warmup/train/validation pieces and drives the hyperparameter search; the
second is split the same way and the selected models are retrained on it
and tested on its last piece.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import statistics
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import singledispatch
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import chaos, esn, metrics, volterra
from .esn import ESNConfig, ESNModel
from .tensor_core import symmetry_metric
from .volterra import VolterraConfig, VolterraModel

SCHEMA_VERSION = 1
DEFAULT_DELTA = 0.2
DEFAULT_N_INI = 1000
DEFAULT_N_PRED = 4000
DEFAULT_N_ICS = 100
FAMILIES = ("tn", "esn")


class AllDivergentError(RuntimeError):
    """Every combination of a grid search diverged."""


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    n_warmup: int = 1000
    n_train: int = 5000
    n_val: int = 5000

    def __post_init__(self):
        for f in fields(self):
            if int(getattr(self, f.name)) < 1:
                raise ValueError(f"{f.name} must be positive")

    @property
    def total(self) -> int:
        return self.n_warmup + self.n_train + self.n_val


def split(trajectory, spec: SplitSpec = SplitSpec()):
    """Contiguous ``(warmup, train, val)`` pieces from the start of
    ``trajectory``."""
    points = _points(trajectory)
    if points.shape[0] < spec.total:
        raise ValueError(
            f"trajectory has {points.shape[0]} points, split needs {spec.total}"
        )
    a = spec.n_warmup
    b = a + spec.n_train
    return points[:a], points[a:b], points[b:spec.total]


def _points(trajectory) -> np.ndarray:
    pts = trajectory.points if isinstance(trajectory, chaos.Trajectory) else trajectory
    pts = np.asarray(pts, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


# ------------------------------------------------------------------ grids


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grids. ``esn_seed=None`` lets :func:`run_task` derive
    the reservoir seed from the top-level seed."""

    tn_M: tuple = (1, 2, 3, 4)
    tn_D: tuple = (2, 3, 4)
    esn_n_reservoir: int = 500
    esn_rho: tuple = (0.8, 0.9, 1.0, 1.1, 1.2)
    esn_g: tuple = (0.1, 0.4, 0.7, 1.0)
    esn_eps: tuple = (0.1, 0.4, 0.7, 1.0)
    esn_lambda: tuple = (1e-13, 1e-10, 1e-7, 1e-4, 1e-1)
    esn_seed: Optional[int] = None

    def __post_init__(self):
        for name in ("tn_M", "tn_D", "esn_rho", "esn_g", "esn_eps", "esn_lambda"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"grid {name} is empty")
            object.__setattr__(self, name, values)
        if any(int(m) < 1 for m in self.tn_M) or any(int(d) < 1 for d in self.tn_D):
            raise ValueError("TN delays and degrees must be >= 1")
        if any(not lam > 0 for lam in self.esn_lambda):
            raise ValueError("ridge parameters must be strictly positive")
        if any(not 0 <= e <= 1 for e in self.esn_eps):
            raise ValueError("leak rates must lie in [0, 1]")
        if self.esn_n_reservoir < 1:
            raise ValueError("esn_n_reservoir must be >= 1")

    def tn_combos(self) -> list[dict]:
        return [{"M": int(m), "D": int(d)} for m, d in itertools.product(self.tn_M, self.tn_D)]

    def esn_combos(self) -> list[dict]:
        return [
            {"spectral_radius": float(r), "input_strength": float(g),
             "leak_rate": float(e), "ridge": float(lam)}
            for r, g, e, lam in itertools.product(
                self.esn_rho, self.esn_g, self.esn_eps, self.esn_lambda)
        ]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown grid keys: {', '.join(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kwargs)


# ----------------------------------------------------------------- trials


@dataclass
class TrialResult:
    """One hyperparameter combination. ``test`` is filled for selected
    models only; ``train_time_seconds`` only when timing was requested."""

    kind: str
    params: dict
    val_score: float
    divergent: bool = False
    test: Optional[dict] = None
    train_time_seconds: Optional[float] = None
    seeds: dict = field(default_factory=dict)

    def tie_break(self) -> tuple:
        if self.kind == "tn":
            M, D = self.params["M"], self.params["D"]
            P = self.params.get("P", 1)
            return (math.comb(P * M + D, D), M, D)
        if self.kind == "esn":
            p = self.params
            return (p["spectral_radius"], p["input_strength"], p["leak_rate"], p["ridge"])
        return tuple(sorted(self.params.items()))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "val_score": _json_float(self.val_score),
            "divergent": self.divergent,
            "test": self.test,
            "train_time_seconds": self.train_time_seconds,
            "seeds": dict(self.seeds),
        }


def select_best(trials: Sequence[TrialResult]) -> TrialResult:
    """Lowest validation score; ties go to the cheaper TN model (smallest R)
    or to the lexicographically smallest ESN hyperparameters."""
    finite = [t for t in trials if math.isfinite(t.val_score)]
    if not finite:
        raise AllDivergentError(f"all {len(trials)} combinations diverged")
    return min(finite, key=lambda t: (t.val_score,) + t.tie_break())


def _map(fn: Callable, items: Iterable, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def tn_config(params: dict, P: int) -> VolterraConfig:
    return VolterraConfig(M=int(params["M"]), D=int(params["D"]), P=P, L=P,
                          svd_tolerance=params.get("svd_tolerance"))


def esn_config(params: dict) -> ESNConfig:
    keys = {f.name for f in fields(ESNConfig)}
    return ESNConfig(**{k: v for k, v in params.items() if k in keys})


def fit_tn(train, params: dict) -> VolterraModel:
    """Next-step TN fit on the training piece only."""
    train = _points(train)
    return volterra.fit_symmetric(train[:-1], train[1:], tn_config(params, train.shape[1]))


def fit_esn(warmup, train, params: dict) -> ESNModel:
    """ESN fit on warmup + training pieces; the warmup states are washed out."""
    data = np.vstack([_points(warmup), _points(train)])
    return esn.train(esn_config(params), data, len(warmup))


def _tn_trial(params, train, val) -> TrialResult:
    P = train.shape[1]
    try:
        model = fit_tn(train, params)
    except (np.linalg.LinAlgError, ValueError):
        return TrialResult("tn", dict(params, P=P), math.inf, True)
    pred = volterra.predict_closed_loop(model, train, val.shape[0])
    score = metrics.wasserstein_score(pred, val)
    return TrialResult("tn", dict(params, P=P), score, not math.isfinite(score))


def _esn_trials(warmup, train, val, grid: GridSpec, seed: int, jobs: int,
                chunk: int = 20) -> list[TrialResult]:
    data = np.vstack([warmup, train])
    P = data.shape[1]
    base = ESNConfig(n_reservoir=grid.esn_n_reservoir, spectral_radius=1.0, seed=seed)
    W0, v = esn.init_reservoir(base, P)
    reservoirs = list(itertools.product(grid.esn_rho, grid.esn_g, grid.esn_eps))
    lams = grid.esn_lambda

    def run_chunk(members):
        rho, g, eps = (np.array(c, dtype=float) for c in zip(*members))
        stats, x_final = esn.drive_batch(W0, v, rho, g, eps, data, len(warmup))
        W_out, b = [], []
        for k in range(len(members)):
            for lam in lams:
                w, c = stats.solve(k, lam)
                W_out.append(w)
                b.append(c)
        rep = len(lams)
        pred = esn.rollout_batch(
            W0, v, np.repeat(rho, rep), np.repeat(g, rep), np.repeat(eps, rep),
            np.repeat(x_final, rep, axis=0), np.stack(W_out), np.stack(b), val.shape[0],
        )
        out = []
        for i, (r, gg, e) in enumerate(members):
            for j, lam in enumerate(lams):
                score = metrics.wasserstein_score(pred[i * rep + j], val)
                params = {"n_reservoir": grid.esn_n_reservoir, "spectral_radius": float(r),
                          "input_strength": float(gg), "leak_rate": float(e),
                          "ridge": float(lam), "seed": int(seed)}
                out.append(TrialResult("esn", params, score, not math.isfinite(score)))
        return out

    chunks = [reservoirs[i:i + chunk] for i in range(0, len(reservoirs), chunk)]
    return [t for part in _map(run_chunk, chunks, jobs) for t in part]


def grid_search(family: str, trajectory, grid: GridSpec = GridSpec(),
                spec: SplitSpec = SplitSpec(), jobs: int = 1,
                esn_seed: int = 0) -> tuple[TrialResult, list[TrialResult]]:
    """Score every combination by the spectral Wasserstein distance of a
    closed-loop run over the validation piece.

    The TN model is trained on the training piece only; the ESN is driven
    through warmup and training pieces from the zero state. All ESN
    combinations share one raw reservoir drawn from ``grid.esn_seed`` (or
    ``esn_seed`` when the grid leaves it open). Returns the selected trial
    and the full table in grid order.
    """
    warmup, train, val = split(trajectory, spec)
    if family == "tn":
        table = _map(lambda p: _tn_trial(p, train, val), grid.tn_combos(), jobs)
    elif family == "esn":
        seed = esn_seed if grid.esn_seed is None else grid.esn_seed
        table = _esn_trials(warmup, train, val, grid, seed, jobs)
    else:
        raise ValueError(f"unknown model family {family!r}")
    return select_best(table), table


# --------------------------------------------------------------- forecast


@singledispatch
def forecast(model, history, steps: int) -> np.ndarray:
    """Closed-loop forecast of ``steps`` samples following ``history``."""
    if not hasattr(model, "forecast"):
        raise TypeError(f"cannot forecast with {type(model).__name__}")
    return np.asarray(model.forecast(history, steps), dtype=float)


@forecast.register
def _(model: VolterraModel, history, steps: int) -> np.ndarray:
    return volterra.predict_closed_loop(model, history, steps)


@forecast.register
def _(model: ESNModel, history, steps: int) -> np.ndarray:
    return esn.predict_closed_loop_esn(model, esn.resynchronize(model, history), steps)


@singledispatch
def forecast_many(model, windows, steps: int) -> np.ndarray:
    """Forecasts from K warmup windows (K x n x P)."""
    return np.stack([forecast(model, w, steps) for w in windows])


@forecast_many.register
def _(model: VolterraModel, windows, steps: int) -> np.ndarray:
    return volterra.predict_closed_loop_batch(model, windows, steps)


@forecast_many.register
def _(model: ESNModel, windows, steps: int) -> np.ndarray:
    return esn.forecast_batch(model, windows, steps)


class ReplayModel:
    """Oracle that looks the history up in a reference series and returns
    the true continuation (NaN past the end of the reference)."""

    def __init__(self, reference):
        self.reference = _points(reference)

    def forecast(self, history, steps: int) -> np.ndarray:
        ref = self.reference
        h = _points(history)
        n = h.shape[0]
        if h.shape[1] != ref.shape[1]:
            raise ValueError("history and reference differ in dimension")
        for end in np.flatnonzero(np.all(ref == h[-1], axis=1)) + 1:
            if end >= n and np.array_equal(ref[end - n:end], h):
                out = np.full((steps, ref.shape[1]), np.nan)
                tail = ref[end:end + steps]
                out[:tail.shape[0]] = tail
                return out
        raise ValueError("history not found in reference series")


# ------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class ShortTermResult:
    smape_mean: float
    smape_stderr: float
    vpt_mean: float
    vpt_stderr: float
    n_censored: int
    n_ics: int
    horizon: int
    smape_values: tuple
    vpt_values: tuple

    def summary(self) -> dict:
        return {k: v for k, v in asdict(self).items()
                if k not in ("smape_values", "vpt_values")}


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def ic_offsets(length: int, n_ics: int, n_ini: int, n_pred: int) -> list[int]:
    """Start offsets spread evenly over the admissible range."""
    span = length - n_pred - n_ini
    if span < 0:
        raise ValueError(f"series of length {length} is shorter than {n_ini} + {n_pred}")
    return [k * span // n_ics for k in range(n_ics)]


def smape_horizon(lam: float, dt: float, n_pred: int) -> int:
    return int(min(max(round(1.0 / (lam * dt)), 1), n_pred))


def evaluate_short_term(model, series, lam: float, dt: float, e_bar: float,
                        n_ics: int = DEFAULT_N_ICS, n_ini: int = DEFAULT_N_INI,
                        n_pred: int = DEFAULT_N_PRED,
                        delta: float = DEFAULT_DELTA) -> ShortTermResult:
    """sMAPE over one Lyapunov time and VPT, averaged over ``n_ics`` windows.

    ``series`` starts ``n_ini`` points before the test piece. Window k uses
    ``series[o_k:o_k + n_ini]`` to warm the model up and is scored against
    the following ``n_pred`` points.
    """
    if n_ics < 1:
        raise ValueError("n_ics must be >= 1")
    series = _points(series)
    offsets = ic_offsets(series.shape[0], n_ics, n_ini, n_pred)
    windows = np.stack([series[o:o + n_ini] for o in offsets])
    targets = np.stack([series[o + n_ini:o + n_ini + n_pred] for o in offsets])
    preds = forecast_many(model, windows, n_pred)
    if preds.shape != targets.shape:
        raise ValueError(f"model produced {preds.shape}, expected {targets.shape}")
    h = smape_horizon(lam, dt, n_pred)
    params = metrics.VptParams(lam, dt, e_bar, delta, n_ini, n_pred)
    sm = np.array([metrics.smape(p[:h], t[:h]) for p, t in zip(preds, targets)])
    vp = [metrics.vpt(p, t, params) for p, t in zip(preds, targets)]
    vv = np.array([r.value for r in vp])
    sm_mean, sm_err = _mean_stderr(sm)
    vp_mean, vp_err = _mean_stderr(vv)
    return ShortTermResult(sm_mean, sm_err, vp_mean, vp_err,
                           sum(r.censored for r in vp), n_ics, h,
                           tuple(sm.tolist()), tuple(vv.tolist()))


@dataclass(frozen=True)
class ClimateResult:
    score: float
    divergent: bool


def evaluate_climate(model, history, target, n_test: Optional[int] = None) -> ClimateResult:
    """Spectral Wasserstein distance of one closed-loop run of ``n_test``
    steps after ``history``; divergence scores ``inf``."""
    target = _points(target)
    n_test = target.shape[0] if n_test is None else n_test
    if n_test > target.shape[0]:
        raise ValueError(f"target has {target.shape[0]} points, need {n_test}")
    pred = forecast(model, history, n_test)
    score = metrics.wasserstein_score(pred, target[:n_test])
    return ClimateResult(score, not math.isfinite(score))


# ----------------------------------------------------------------- timing


@dataclass(frozen=True)
class TimingResult:
    median: float
    samples: tuple


def time_training(family: str, params: dict, train_data, repeats: int = 5,
                  n_warmup: int = 0) -> TimingResult:
    """Median single-thread wall time of the fit call.

    TN: feature construction and solve on ``train_data``. ESN: reservoir
    drive and ridge solve on ``train_data`` (warmup included, first
    ``n_warmup`` states discarded); the reservoir is built beforehand.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    data = _points(train_data)
    if family == "tn":
        x, y = data[:-1].copy(), data[1:].copy()
        cfg = tn_config(params, data.shape[1])
        basis = volterra.enumerate_monomials(cfg.I, cfg.D)
        fn = lambda: volterra.fit_symmetric(x, y, cfg, basis)  # noqa: E731
    elif family == "esn":
        model = esn.make_model(esn_config(params), data.shape[1])
        fn = lambda: esn.fit_readout(model, data, n_warmup)  # noqa: E731
    else:
        raise ValueError(f"unknown model family {family!r}")
    samples = []
    with threadpool_limits(limits=1):
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
    return TimingResult(statistics.median(samples), tuple(samples))


# --------------------------------------------------------------- appendix


def correlated_signal(n) -> np.ndarray:
    """Product of three sines; strongly correlated across delays."""
    n = np.asarray(n, dtype=float)
    return 0.5 * (1.0 + np.sin(2 * np.pi * n * 2.11 / 100)
                  * np.sin(2 * np.pi * n * 3.73 / 100)
                  * np.sin(2 * np.pi * n * 4.11 / 100))


@dataclass(frozen=True)
class AppendixResult:
    rows: tuple            # dicts: input, N, R, rank_U, rank_UUt, S, residual
    profiles: dict         # (input, N) -> singular values of U


def appendix_experiment(seed: int = 0, sizes: Sequence[int] = (50, 100),
                        M: int = 4, D: int = 4) -> AppendixResult:
    """Rank and symmetry of the full pseudoinverse solution for the memory
    task ``y(n) = u(n-1)``, with uniform and correlated scalar inputs.

    Each case uses ``N + M - 1`` input samples so U has N rows. The
    pseudoinverse keeps singular values above ``eps * min(U.shape)`` times
    the largest; numerical ranks use numpy's default rule.
    """
    rng = np.random.default_rng(seed)
    rows, profiles = [], {}
    for kind in ("uncorrelated", "correlated"):
        for N in sizes:
            length = N + M - 1
            if kind == "uncorrelated":
                u = rng.uniform(0.0, 1.0, length)
            else:
                u = correlated_signal(np.arange(1, length + 1))
            target = np.concatenate(([0.0], u[:-1]))
            R = math.comb(M + D, D)
            tol = np.finfo(float).eps * min(N, (M + 1) ** D)
            cfg = VolterraConfig(M=M, D=D, svd_tolerance=tol)
            U = volterra.build_feature_matrix_full(u, cfg)
            model = volterra.fit_naive(u, target, cfg)
            H = model.full_coefficients[:, 0]
            resid = float(np.linalg.norm(U @ H - target[M - 1:]))
            rows.append({
                "input": kind, "N": N, "R": R,
                "rank_U": int(np.linalg.matrix_rank(U)),
                "rank_UUt": int(np.linalg.matrix_rank(U @ U.T)),
                "S": symmetry_metric(H.reshape((M + 1,) * D)),
                "residual": resid,
            })
            profiles[(kind, N)] = model.singular_values
    return AppendixResult(tuple(rows), profiles)


# ------------------------------------------------------------------ tasks


def task_seeds(system: str, seed: int) -> dict:
    """Independent seeds for the two trajectories and the reservoir."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(system.lower().encode())])
    a, b, c = (int(child.generate_state(1)[0]) for child in ss.spawn(3))
    return {"top_level": int(seed), "trajectory_validation": a,
            "trajectory_test": b, "reservoir": c}


@dataclass
class TaskResult:
    system: str
    seed: int
    seeds: dict
    dt: float
    lam: float
    e_bar: float
    tables: dict          # family -> list[TrialResult]
    selected: dict        # family -> TrialResult (with test metrics)


def _test_model(family: str, params: dict, warmup, train) -> object:
    if family == "tn":
        return fit_tn(train, params)
    return fit_esn(warmup, train, params)


def run_task(system: str, seed: int, grid: GridSpec = GridSpec(),
             spec: SplitSpec = SplitSpec(), families: Sequence[str] = FAMILIES,
             n_ics: int = DEFAULT_N_ICS, n_ini: int = DEFAULT_N_INI,
             n_pred: int = DEFAULT_N_PRED, delta: float = DEFAULT_DELTA,
             timing_repeats: int = 0, jobs: int = 1,
             trajectories: Optional[tuple] = None) -> TaskResult:
    """Grid search on one trajectory, retrain and test on a second one."""
    seeds = task_seeds(system, seed)
    if trajectories is None:
        trajectories = tuple(
            chaos.generate_trajectory(system, spec.total, seed=seeds[key])
            for key in ("trajectory_validation", "trajectory_test")
        )
    traj_val, traj_test = trajectories
    warm2, train2, test2 = split(traj_test, spec)
    n_fit = spec.n_warmup + spec.n_train
    e_bar = metrics.mean_pairwise_distance(traj_test.points[:n_fit])
    short_series = traj_test.points[n_fit - n_ini:spec.total]
    tables, selected = {}, {}
    for family in families:
        best, table = grid_search(family, traj_val, grid, spec, jobs,
                                  esn_seed=seeds["reservoir"])
        model = _test_model(family, best.params, warm2, train2)
        history = train2 if family == "tn" else np.vstack([warm2, train2])
        st = evaluate_short_term(model, short_series, traj_test.lam, traj_test.dt,
                                 e_bar, n_ics, n_ini, n_pred, delta)
        cl = evaluate_climate(model, history, test2)
        chosen = TrialResult(family, dict(best.params), best.val_score, best.divergent,
                             seeds=dict(seeds))
        chosen.test = dict(st.summary(), wasserstein=_json_float(cl.score),
                           climate_divergent=cl.divergent)
        if timing_repeats:
            data = train2 if family == "tn" else np.vstack([warm2, train2])
            chosen.train_time_seconds = time_training(
                family, best.params, data, timing_repeats,
                n_warmup=0 if family == "tn" else spec.n_warmup).median
        tables[family] = table
        selected[family] = chosen
    return TaskResult(traj_test.system, seed, seeds, traj_test.dt, traj_test.lam,
                      e_bar, tables, selected)


# ---------------------------------------------------------------- reports


def conventions(spec: SplitSpec = SplitSpec(), grid: Optional[GridSpec] = None,
                n_ics: int = DEFAULT_N_ICS, n_ini: int = DEFAULT_N_INI,
                n_pred: int = DEFAULT_N_PRED, delta: float = DEFAULT_DELTA) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "splits": asdict(spec),
        "welch": {"window": metrics.WELCH_WINDOW, "nperseg": metrics.WELCH_SEGMENT,
                  "noverlap": metrics.WELCH_OVERLAP, "detrend": "constant", "fs": 1.0},
        "vpt": {"delta": delta, "n_ini": n_ini, "n_pred": n_pred},
        "short_term": {"n_ics": n_ics, "offsets": "floor(k*(len-n_ini-n_pred)/n_ics)",
                       "smape_horizon": "round(1/(lambda*dt))",
                       "tn_warmup": "last M points", "esn_warmup": "n_ini points from zero state"},
        "tie_break": {"tn": "smallest R, then M, then D",
                      "esn": "lexicographic (rho, g, eps, lambda)"},
        "standardization": "per trajectory, own moments",
    }
    if grid is not None:
        out["grid"] = grid.to_dict()
    return out


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_csv(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    """Rows of a CSV written by this module, with numbers parsed back."""
    def parse(s):
        if s in ("true", "false"):
            return s == "true"
        for conv in (int, float):
            try:
                return conv(s)
            except ValueError:
                pass
        return s
    with open(path, newline="") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def trial_rows(trials: Sequence[TrialResult]) -> list[dict]:
    rows = []
    for t in trials:
        row = {"kind": t.kind}
        row.update(t.params)
        row["val_score"] = float(t.val_score)
        row["divergent"] = t.divergent
        rows.append(row)
    return rows


FIG1_COLUMNS = ("system", "seed", "model", "smape_mean", "smape_stderr", "vpt_mean",
                "vpt_stderr", "n_censored", "n_ics", "wasserstein", "climate_divergent",
                "lambda", "dt")
TIMING_COLUMNS = ("system", "seed", "model", "train_time_seconds")


def fig1_rows(tasks: Sequence[TaskResult]) -> list[dict]:
    rows = []
    for task in tasks:
        for family, t in task.selected.items():
            test = t.test
            w = test["wasserstein"]
            rows.append({
                "system": task.system, "seed": task.seed, "model": family,
                "smape_mean": test["smape_mean"], "smape_stderr": test["smape_stderr"],
                "vpt_mean": test["vpt_mean"], "vpt_stderr": test["vpt_stderr"],
                "n_censored": test["n_censored"], "n_ics": test["n_ics"],
                "wasserstein": float(w) if not isinstance(w, str) else w,
                "climate_divergent": test["climate_divergent"],
                "lambda": task.lam, "dt": task.dt,
            })
    return rows


def timing_rows(tasks: Sequence[TaskResult]) -> list[dict]:
    return [
        {"system": task.system, "seed": task.seed, "model": family,
         "train_time_seconds": t.train_time_seconds}
        for task in tasks for family, t in task.selected.items()
        if t.train_time_seconds is not None
    ]


def task_to_dict(task: TaskResult) -> dict:
    return {
        "system": task.system, "seed": task.seed, "seeds": task.seeds,
        "dt": task.dt, "lambda": task.lam, "e_bar": task.e_bar,
        "selected": {f: _strip_timing(t.to_dict()) for f, t in task.selected.items()},
        "tables": {f: [_strip_timing(t.to_dict()) for t in tab]
                   for f, tab in task.tables.items()},
    }


def _strip_timing(d: dict) -> dict:
    # wall-clock times live in timing.csv so that result files stay reproducible
    d = dict(d)
    d.pop("train_time_seconds", None)
    return d


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
