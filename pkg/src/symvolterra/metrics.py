"""Short-term (sMAPE, VPT) and climate (spectral Wasserstein) metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.signal
from scipy.spatial.distance import cdist

WELCH_SEGMENT = 256
WELCH_OVERLAP = 128
WELCH_WINDOW = "hann"


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def smape(pred, target) -> float:
    """Symmetric mean absolute percentage error in [0, 200].

    Steps where both vectors vanish contribute 0; steps with a non-finite
    prediction contribute the maximal ratio 1.
    """
    pred, target = _as_2d(pred), _as_2d(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.shape[0] < 1:
        raise ValueError("need at least one time step")
    bad = ~np.all(np.isfinite(pred), axis=1)
    pred = np.where(bad[:, None], 0.0, pred)
    num = np.linalg.norm(target - pred, axis=1)
    den = np.linalg.norm(target, axis=1) + np.linalg.norm(pred, axis=1)
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    ratio[bad] = 1.0
    return float(200.0 * ratio.mean())


@dataclass(frozen=True)
class VptParams:
    lam: float
    dt: float
    e_bar: float
    delta: float = 0.2
    n_ini: int = 1000
    n_pred: int = 4000

    def __post_init__(self):
        if not self.e_bar > 0:
            raise ValueError("e_bar must be > 0")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")


class VptResult(NamedTuple):
    value: float
    censored: bool


def vpt(pred, target, params: VptParams) -> VptResult:
    """Valid prediction time in Lyapunov times.

    ``pred``/``target`` hold either the ``n_pred`` predicted steps or the
    full ``n_ini + n_pred`` window (the first ``n_ini`` rows are then
    skipped). Runs that never exceed the threshold return the censored
    value ``lam * dt * n_pred``.
    """
    pred, target = _as_2d(pred), _as_2d(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    if n == params.n_ini + params.n_pred:
        pred, target = pred[params.n_ini:], target[params.n_ini:]
    elif n != params.n_pred:
        raise ValueError(
            f"expected {params.n_pred} or {params.n_ini + params.n_pred} steps, got {n}"
        )
    scale = params.lam * params.dt
    with np.errstate(invalid="ignore"):
        err = np.linalg.norm(target - pred, axis=1) / params.e_bar
    # NaN (diverged) counts as a failure
    failed = ~(err <= params.delta)
    if not np.any(failed):
        return VptResult(scale * params.n_pred, True)
    k = int(np.argmax(failed)) + 1  # 1-based offset past n_ini
    return VptResult(scale * (k - 1), False)


def mean_pairwise_distance(states, block: int = 1024) -> float:
    """Mean Euclidean distance over all pairs j < k (exact, blockwise)."""
    x = _as_2d(states)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two states")
    total = 0.0
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = cdist(x[start:stop], x[start:])
        # keep only k > j within the block's own columns
        total += np.triu(d[:, :stop - start], k=1).sum() + d[:, stop - start:].sum()
    return float(total / (n * (n - 1) / 2))


@dataclass(frozen=True)
class SpectralDistribution:
    frequencies: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        m = np.asarray(self.mass, dtype=float)
        if f.shape != m.shape or f.ndim != 1:
            raise ValueError("frequencies and mass must be 1-D arrays of equal length")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(m < 0):
            raise ValueError("mass must be nonnegative")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "mass", m)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.mass)

    @property
    def normalized(self) -> bool:
        return abs(self.mass.sum() - 1.0) <= 1e-9


def welch_psd(channel, fs: float = 1.0) -> SpectralDistribution:
    """Welch PSD (Hann, 256-sample segments, 50% overlap) normalized to unit
    mass over nonnegative frequencies.

    Segments are mean-detrended. A signal without power outside DC gets all
    of its mass on the zero-frequency bin.
    """
    x = np.asarray(channel, dtype=float).ravel()
    if x.size < WELCH_SEGMENT:
        raise ValueError(f"series of length {x.size} is shorter than one segment")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite samples")
    freqs, power = scipy.signal.welch(
        x, fs=fs, window=WELCH_WINDOW, nperseg=WELCH_SEGMENT,
        noverlap=WELCH_OVERLAP, detrend="constant",
    )
    total = power.sum()
    if total > 0:
        mass = power / total
    else:
        mass = np.zeros_like(power)
        mass[0] = 1.0
    return SpectralDistribution(freqs, mass)


def _quantile_steps(dist: SpectralDistribution):
    cum = dist.cumulative
    cum = cum / cum[-1]
    return cum, dist.frequencies


def wasserstein2(a: SpectralDistribution, b: SpectralDistribution) -> float:
    """``int_0^1 |F_a^{-1}(x) - F_b^{-1}(x)|^2 dx`` for discrete distributions
    (no square root), integrated exactly over merged quantile breakpoints."""
    if not (a.normalized and b.normalized):
        raise ValueError("both distributions must have unit mass")
    cum_a, f_a = _quantile_steps(a)
    cum_b, f_b = _quantile_steps(b)
    breaks = np.union1d(cum_a, cum_b)
    breaks = breaks[(breaks > 0) & (breaks <= 1)]
    lo = np.concatenate(([0.0], breaks[:-1]))
    widths = breaks - lo
    keep = widths > 0
    mid = 0.5 * (lo + breaks)[keep]
    # quantile = first support point whose cumulative mass reaches x
    qa = f_a[np.minimum(np.searchsorted(cum_a, mid), f_a.size - 1)]
    qb = f_b[np.minimum(np.searchsorted(cum_b, mid), f_b.size - 1)]
    return float(np.sum(widths[keep] * (qa - qb) ** 2))


def wasserstein_score(pred, target, fs: float = 1.0) -> float:
    """Mean over paired channels of the spectral W2; ``inf`` if ``pred`` is
    not finite."""
    pred, target = _as_2d(pred), _as_2d(target)
    if pred.shape[1] != target.shape[1]:
        raise ValueError(f"channel mismatch: {pred.shape[1]} vs {target.shape[1]}")
    if not np.all(np.isfinite(pred)):
        return float("inf")
    return float(np.mean([
        wasserstein2(welch_psd(pred[:, p], fs), welch_psd(target[:, p], fs))
        for p in range(pred.shape[1])
    ]))
