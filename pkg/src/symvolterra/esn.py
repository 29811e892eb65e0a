"""Leaky echo state network baseline with a ridge readout and offset."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

SCHEMA_VERSION = 1
_MAX_DRAWS = 3


@dataclass(frozen=True)
class ESNConfig:
    n_reservoir: int = 500
    spectral_radius: float = 1.0
    input_strength: float = 0.5
    leak_rate: float = 1.0
    ridge: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.n_reservoir < 1:
            raise ValueError("n_reservoir must be >= 1")
        if not 0.0 <= self.leak_rate <= 1.0:
            raise ValueError("leak_rate must lie in [0, 1]")
        if not self.ridge > 0:
            raise ValueError("ridge must be > 0")
        if self.spectral_radius < 0:
            raise ValueError("spectral_radius must be >= 0")


@dataclass(frozen=True)
class ESNModel:
    """Reservoir ``W`` (N_r x N_r), input matrix ``v`` (N_r x P) and, once
    trained, readout ``W_out`` (N_r x L) with offset ``b`` (L)."""

    config: ESNConfig
    W: np.ndarray
    v: np.ndarray
    W_out: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def P(self) -> int:
        return self.v.shape[1]

    @property
    def L(self) -> Optional[int]:
        return None if self.W_out is None else self.W_out.shape[1]


def spectral_radius(W) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(W))))


def init_reservoir(config: ESNConfig, P: int):
    """Draw ``W`` and ``v`` uniformly on [-1, 1] and rescale ``W`` to the
    configured spectral radius."""
    if P < 1:
        raise ValueError("P must be >= 1")
    rng = np.random.default_rng(config.seed)
    n = config.n_reservoir
    for _ in range(_MAX_DRAWS):
        W = rng.uniform(-1.0, 1.0, size=(n, n))
        v = rng.uniform(-1.0, 1.0, size=(n, P))
        radius = spectral_radius(W)
        if radius > 0.0:
            return W * (config.spectral_radius / radius), v
    raise np.linalg.LinAlgError(
        f"raw reservoir had zero spectral radius in {_MAX_DRAWS} draws"
    )


def make_model(config: ESNConfig, P: int) -> ESNModel:
    W, v = init_reservoir(config, P)
    return ESNModel(config, W, v)


def esn_step(model: ESNModel, x_prev, u, g: Optional[float] = None,
             eps: Optional[float] = None) -> np.ndarray:
    """``x = (1 - eps) x_prev + eps tanh(W x_prev + g v u)``."""
    g = model.config.input_strength if g is None else g
    eps = model.config.leak_rate if eps is None else eps
    x_prev = np.asarray(x_prev, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x_prev.shape != (model.W.shape[0],):
        raise ValueError(f"state has shape {x_prev.shape}, expected ({model.W.shape[0]},)")
    if u.shape != (model.P,):
        raise ValueError(f"input has shape {u.shape}, expected ({model.P},)")
    return (1.0 - eps) * x_prev + eps * np.tanh(model.W @ x_prev + g * (model.v @ u))


def _run(model: ESNModel, inputs: np.ndarray, x0: np.ndarray,
         keep_from: int) -> tuple[np.ndarray, np.ndarray]:
    cfg = model.config
    eps = cfg.leak_rate
    drive_terms = cfg.input_strength * inputs @ model.v.T
    W = model.W
    x = x0.copy()
    kept = np.empty((max(inputs.shape[0] - keep_from, 0), W.shape[0]))
    for n in range(inputs.shape[0]):
        x = (1.0 - eps) * x + eps * np.tanh(W @ x + drive_terms[n])
        if n >= keep_from:
            kept[n - keep_from] = x
    return kept, x


def _as_inputs(series, P: int) -> np.ndarray:
    u = np.asarray(series, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != P:
        raise ValueError(f"series must have shape (N, {P})")
    return u


def drive(model: ESNModel, series, n_warmup: int, n_train: int,
          x0=None) -> np.ndarray:
    """Run the reservoir over ``series`` from ``x0`` (zero by default) and
    return the ``n_train`` states following the first ``n_warmup``.

    Row k is the state after consuming ``series[n_warmup + k]``.
    """
    u = _as_inputs(series, model.P)
    if u.shape[0] < n_warmup + n_train:
        raise ValueError(
            f"series of length {u.shape[0]} is shorter than {n_warmup} + {n_train}"
        )
    x0 = np.zeros(model.W.shape[0]) if x0 is None else np.asarray(x0, dtype=float)
    states, _ = _run(model, u[:n_warmup + n_train], x0, n_warmup)
    return states


def resynchronize(model: ESNModel, window, x0=None) -> np.ndarray:
    """State after driving the reservoir from ``x0`` through ``window``."""
    x0 = np.zeros(model.W.shape[0]) if x0 is None else np.asarray(x0, dtype=float)
    u = np.asarray(window, dtype=float)
    if u.size == 0:
        return x0.copy()
    u = _as_inputs(u, model.P)
    _, x = _run(model, u, x0, u.shape[0])
    return x


def _solve_spd(G, rhs, lam):
    G = G.copy()
    G[np.diag_indices_from(G)] += lam
    # tiny ridge values are part of the search grid; their conditioning is
    # judged by the validation score, not by a warning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        try:
            return scipy.linalg.solve(G, rhs, assume_a="pos")
        except np.linalg.LinAlgError:
            return scipy.linalg.solve(G, rhs, assume_a="sym")


def fit_ridge(X, Y, lam: float):
    """Ridge readout with offset.

    ``W_out = (X^T A X + lam I)^{-1} X^T A Y`` with the centering matrix
    ``A = I - 11^T/N``, and ``b = mean(Y - X W_out)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y need the same, nonzero number of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite values in ridge problem")
    if not lam > 0:
        raise ValueError("lam must be > 0")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    W_out = _solve_spd(Xc.T @ Xc, Xc.T @ Yc, lam)
    b = (Y - X @ W_out).mean(axis=0)
    return W_out, b


def fit_readout(model: ESNModel, data, n_warmup: int) -> ESNModel:
    """Drive ``model`` over ``data[:-1]`` and fit the readout to next-step
    targets ``data[1:]``, discarding the first ``n_warmup`` states."""
    data = _as_inputs(data, model.P)
    n_train = data.shape[0] - 1 - n_warmup
    if n_train < 1:
        raise ValueError("not enough data after washout")
    X = drive(model, data[:-1], n_warmup, n_train)
    W_out, b = fit_ridge(X, data[n_warmup + 1:], model.config.ridge)
    return replace(model, W_out=W_out, b=b)


def train(config: ESNConfig, data, n_warmup: int) -> ESNModel:
    """Build the reservoir for ``config`` and fit its readout on ``data``."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    return fit_readout(make_model(config, data.shape[1]), data, n_warmup)


def readout(model: ESNModel, x) -> np.ndarray:
    return x @ model.W_out + model.b


def predict_closed_loop_esn(model: ESNModel, x_state, steps: int,
                            g: Optional[float] = None, eps: Optional[float] = None,
                            divergence_bound: float = 1e8) -> np.ndarray:
    """Alternate readout and reservoir update with the output as input.

    ``x_state`` is the state after the last known input; row k of the result
    predicts the (k+1)-th following sample.
    """
    if model.W_out is None:
        raise ValueError("model has no trained readout")
    if model.L != model.P:
        raise ValueError(f"closed loop needs L == P (got L={model.L}, P={model.P})")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    g = model.config.input_strength if g is None else g
    eps = model.config.leak_rate if eps is None else eps
    out = np.full((steps, model.P), np.nan)
    x = np.asarray(x_state, dtype=float).copy()
    W, v = model.W, model.v
    for k in range(steps):
        y = x @ model.W_out + model.b
        if not np.all(np.abs(y) <= divergence_bound):
            break
        out[k] = y
        x = (1.0 - eps) * x + eps * np.tanh(W @ x + g * (v @ y))
    return out


def model_to_dict(model: ESNModel, include_matrices: bool = False) -> dict:
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "esn",
        "config": asdict(model.config),
        "P": model.P,
        "W_out": None if model.W_out is None else model.W_out.tolist(),
        "b": None if model.b is None else model.b.tolist(),
        "metadata": dict(model.metadata),
    }
    if include_matrices:
        data["W"] = model.W.tolist()
        data["v"] = model.v.tolist()
    return data


def model_from_dict(data: dict) -> ESNModel:
    if data.get("kind") != "esn":
        raise ValueError(f"not an ESN model file (kind={data.get('kind')!r})")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {data.get('schema_version')}")
    config = ESNConfig(**data["config"])
    if "W" in data:
        W, v = np.array(data["W"]), np.array(data["v"])
    else:
        W, v = init_reservoir(config, data["P"])
    W_out = None if data["W_out"] is None else np.array(data["W_out"], dtype=float)
    b = None if data["b"] is None else np.array(data["b"], dtype=float)
    return ESNModel(config, W, v, W_out, b, dict(data.get("metadata", {})))


def save_model(model: ESNModel, path, include_matrices: bool = False) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, include_matrices), fh)
        fh.write("\n")


def load_model(path) -> ESNModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# Batched kernels. Members of a batch share the raw reservoir ``W0`` and
# input matrix ``v``; member k uses reservoir ``scale[k] * W0``, input
# strength ``g[k]`` and leak rate ``eps[k]``. Used by the grid search and
# the multi-initial-condition evaluation, where one GEMM per time step
# replaces K matrix-vector products.


@dataclass
class RidgeStatistics:
    """Sums of shifted states ``x - shift`` needed for the centered ridge
    solution; the shift (first kept state) limits cancellation."""

    n: int
    shift: np.ndarray   # K x N_r
    sum_x: np.ndarray   # K x N_r
    sum_y: np.ndarray   # P
    xx: np.ndarray      # K x N_r x N_r
    xy: np.ndarray      # K x N_r x P

    def solve(self, k: int, lam: float):
        mx = self.sum_x[k] / self.n
        my = self.sum_y / self.n
        G = self.xx[k] - self.n * np.outer(mx, mx)
        C = self.xy[k] - self.n * np.outer(mx, my)
        W_out = _solve_spd(G, C, lam)
        return W_out, my - (mx + self.shift[k]) @ W_out


def drive_batch(W0, v, scale, g, eps, data, n_warmup: int, block: int = 250):
    """Drive K reservoirs over next-step training pairs of ``data`` from the
    zero state.

    Returns ridge statistics over the states after the washout and the
    final states (after consuming the last sample of ``data``).
    """
    data = np.asarray(data, dtype=float)
    scale, g, eps = (np.asarray(a, dtype=float)[:, None] for a in (scale, g, eps))
    K, n_r = scale.shape[0], W0.shape[0]
    T = data.shape[0]
    n_train = T - 1 - n_warmup
    if n_train < 1:
        raise ValueError("not enough data after washout")
    inp = data @ v.T  # T x N_r
    x = np.zeros((K, n_r))
    P = data.shape[1]
    stats = RidgeStatistics(n_train, np.zeros((K, n_r)), np.zeros((K, n_r)),
                            data[n_warmup + 1:].sum(axis=0),
                            np.zeros((K, n_r, n_r)), np.zeros((K, n_r, P)))
    buf = np.empty((K, block, n_r))
    filled = 0
    first = 0
    for n in range(T):
        x = (1.0 - eps) * x + eps * np.tanh(scale * (x @ W0.T) + g * inp[n])
        # states for inputs n_warmup .. T-2 pair with targets n_warmup+1 .. T-1
        if n_warmup <= n < T - 1:
            if n == n_warmup:
                stats.shift[:] = x
            if filled == 0:
                first = n + 1
            buf[:, filled] = x - stats.shift
            filled += 1
            if filled == block or n == T - 2:
                Xb = buf[:, :filled]
                Yb = data[first:first + filled]
                stats.sum_x += Xb.sum(axis=1)
                XbT = Xb.transpose(0, 2, 1)
                stats.xx += XbT @ Xb
                stats.xy += XbT @ Yb
                filled = 0
    return stats, x


def rollout_batch(W0, v, scale, g, eps, x0, W_out, b, steps: int,
                  divergence_bound: float = 1e8) -> np.ndarray:
    """Closed-loop rollouts of K trained members (``W_out``: K x N_r x P,
    ``b``: K x P). Diverged members yield NaN from the failing step on."""
    scale, g, eps = (np.asarray(a, dtype=float)[:, None] for a in (scale, g, eps))
    x = np.array(x0, dtype=float)
    K, P = b.shape
    out = np.full((K, steps, P), np.nan)
    alive = np.ones(K, dtype=bool)
    for t in range(steps):
        y = np.einsum("ki,kip->kp", x, W_out) + b
        ok = np.all(np.abs(y) <= divergence_bound, axis=1)
        alive &= ok
        if not alive.any():
            break
        y[~alive] = 0.0
        out[alive, t] = y[alive]
        x = (1.0 - eps) * x + eps * np.tanh(scale * (x @ W0.T) + g * (y @ v.T))
        x[~alive] = 0.0
    return out


def forecast_batch(model: ESNModel, windows, steps: int,
                   divergence_bound: float = 1e8) -> np.ndarray:
    """Resynchronize one trained model through each of K warmup windows
    (K x n_ini x P) from the zero state, then roll out ``steps`` steps."""
    windows = np.asarray(windows, dtype=float)
    K = windows.shape[0]
    cfg = model.config
    ones = np.ones(K)
    g, eps = cfg.input_strength * ones, cfg.leak_rate * ones
    x = np.zeros((K, model.W.shape[0]))
    e = eps[:, None]
    for t in range(windows.shape[1]):
        x = (1.0 - e) * x + e * np.tanh(x @ model.W.T + g[:, None] * (windows[:, t] @ model.v.T))
    W_out = np.broadcast_to(model.W_out, (K,) + model.W_out.shape)
    b = np.broadcast_to(model.b, (K,) + model.b.shape)
    return rollout_batch(model.W, model.v, ones, g, eps, x, W_out, b, steps,
                         divergence_bound)
