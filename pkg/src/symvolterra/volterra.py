"""Truncated Volterra series regression with symmetric kernels.

Features for time step ``n`` are the D-fold Kronecker power of the
extended input ``u_n = (1, u(n), u(n-1), ..., u(n-M+1))``. Because that
power is the vectorization of a symmetric tensor, only
``R = C(PM + D, PM)`` distinct monomials exist. :func:`fit_symmetric`
solves the minimal-norm least-squares problem directly in that compressed
monomial basis; :func:`fit_naive` forms the full ``N x I^D`` matrix and is
kept as an oracle.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .tensor_core import khatri_rao_rowwise

DEFAULT_MAX_ELEMENTS = 10**8
MAX_MONOMIALS = 2 * 10**6
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class VolterraConfig:
    """Hyperparameters of a truncated Volterra model.

    ``svd_tolerance`` is the relative singular value cutoff; ``None`` means
    ``1e-10 * sqrt(N)`` with N the number of training rows.
    """

    M: int
    D: int
    P: int = 1
    L: int = 1
    svd_tolerance: Optional[float] = None

    def __post_init__(self):
        for name in ("M", "D", "P", "L"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        tol = self.svd_tolerance
        if tol is not None and not 0.0 < tol < 1.0:
            raise ValueError(f"svd_tolerance must lie in (0, 1), got {tol}")

    @property
    def I(self) -> int:
        return self.P * self.M + 1

    @property
    def R(self) -> int:
        return math.comb(self.P * self.M + self.D, self.P * self.M)

    def tolerance_for(self, n_rows: int) -> float:
        if self.svd_tolerance is not None:
            return self.svd_tolerance
        return 1e-10 * math.sqrt(n_rows)


@dataclass(frozen=True)
class MonomialBasis:
    """Distinct degree-D monomials of an I-vector.

    ``indices`` holds the sorted 0-based index tuples (R x D);
    ``multiplicities[j]`` counts the positions of monomial j in the full
    Kronecker power.
    """

    I: int
    D: int
    indices: np.ndarray
    multiplicities: np.ndarray

    @property
    def R(self) -> int:
        return self.indices.shape[0]

    @property
    def entries(self) -> list[tuple[int, ...]]:
        """Monomials as 1-based index tuples."""
        return [tuple(int(i) + 1 for i in row) for row in self.indices]

    def codes(self, index_rows: np.ndarray) -> np.ndarray:
        """Base-I code of sorted index rows; monotone in lexicographic order."""
        weights = self.I ** np.arange(self.D - 1, -1, -1, dtype=np.int64)
        return index_rows.astype(np.int64) @ weights

    def positions(self) -> np.ndarray:
        """Basis slot of every entry of the full Kronecker power.

        Entry ``k`` (0-based, first Kronecker factor slowest as in
        ``np.kron``) belongs to monomial ``positions()[k]``.
        """
        total = self.I**self.D
        idx = np.stack(np.unravel_index(np.arange(total), (self.I,) * self.D), axis=1)
        idx.sort(axis=1)
        return np.searchsorted(self.codes(self.indices), self.codes(idx))


def enumerate_monomials(I: int, D: int) -> MonomialBasis:
    if I < 1 or D < 1:
        raise ValueError("I and D must be >= 1")
    R = math.comb(I - 1 + D, D)
    if R > MAX_MONOMIALS:
        raise ValueError(f"R = {R} monomials exceeds the limit {MAX_MONOMIALS}")
    indices = np.array(
        list(itertools.combinations_with_replacement(range(I), D)), dtype=np.int64
    ).reshape(R, D)
    # c_j = D! / prod(run-length factorials)
    d_fact = math.factorial(D)
    mult = np.empty(R, dtype=np.int64)
    for j, row in enumerate(indices):
        _, counts = np.unique(row, return_counts=True)
        mult[j] = d_fact // math.prod(math.factorial(int(c)) for c in counts)
    return MonomialBasis(I, D, indices, mult)


@dataclass(frozen=True)
class VolterraModel:
    """Fitted symmetric Volterra model.

    ``coefficients`` is R x L: one coefficient per distinct monomial and
    output channel. ``full_coefficients`` is only set by :func:`fit_naive`
    and holds the raw ``I^D x L`` pseudoinverse solution.
    """

    config: VolterraConfig
    basis: MonomialBasis
    coefficients: np.ndarray
    singular_values: Optional[np.ndarray] = None
    rank: Optional[int] = None
    full_coefficients: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def weighted_coefficients(self) -> np.ndarray:
        return self.basis.multiplicities[:, None] * self.coefficients


def _as_series(series) -> np.ndarray:
    u = np.asarray(series, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2:
        raise ValueError("series must be 1-D or 2-D (N x P)")
    return u


def build_extended_input(series, n: int, M: int) -> np.ndarray:
    """``(1, u(n), u(n-1), ..., u(n-M+1))`` for 1-based time index ``n``."""
    u = _as_series(series)
    if n < M or n > u.shape[0]:
        raise ValueError(f"time index {n} needs {M} samples of history")
    window = u[n - M:n][::-1]
    return np.concatenate(([1.0], window.ravel()))


def extended_input_matrix(series, M: int) -> np.ndarray:
    """Stack of extended inputs for n = M..N (rows), shape (N-M+1) x I."""
    u = _as_series(series)
    N, P = u.shape
    if N < M:
        raise ValueError(f"series of length {N} is shorter than the delay M={M}")
    rows = N - M + 1
    out = np.empty((rows, P * M + 1))
    out[:, 0] = 1.0
    for m in range(M):
        out[:, 1 + m * P:1 + (m + 1) * P] = u[M - 1 - m:N - m]
    return out


def _check_config(u: np.ndarray, config: VolterraConfig):
    if u.shape[1] != config.P:
        raise ValueError(f"series has {u.shape[1]} channels, config expects P={config.P}")


def build_feature_matrix_full(series, config: VolterraConfig,
                              max_elements: int = DEFAULT_MAX_ELEMENTS) -> np.ndarray:
    """Full feature matrix U (rows n = M..N, I^D columns) via repeated
    row-wise Khatri-Rao products."""
    u = _as_series(series)
    _check_config(u, config)
    rows = u.shape[0] - config.M + 1
    if rows < 1:
        raise ValueError("series is shorter than the maximum delay")
    n_elements = rows * config.I**config.D
    if n_elements > max_elements:
        raise MemoryError(
            f"full feature matrix needs {n_elements} elements (budget {max_elements})"
        )
    Ut = extended_input_matrix(u, config.M)
    U = Ut
    for _ in range(config.D - 1):
        U = khatri_rao_rowwise(U, Ut)
    return U


def monomial_values(ext: np.ndarray, basis: MonomialBasis) -> np.ndarray:
    """Products ``prod_d ext[..., idx_j(d)]`` for every basis monomial."""
    return np.prod(ext[..., basis.indices], axis=-1)


def build_feature_matrix_compressed(series, config: VolterraConfig,
                                    basis: Optional[MonomialBasis] = None):
    """Distinct-monomial feature matrix ``Uc`` (rows n = M..N, R columns)."""
    u = _as_series(series)
    _check_config(u, config)
    if basis is None:
        basis = enumerate_monomials(config.I, config.D)
    Ut = extended_input_matrix(u, config.M)
    return monomial_values(Ut, basis), basis


def _aligned_targets(targets, n_series: int, M: int) -> np.ndarray:
    Y = _as_series(targets)
    if Y.shape[0] != n_series:
        raise ValueError(
            f"targets have {Y.shape[0]} rows, series has {n_series}"
        )
    return Y[M - 1:]


def _thin_svd(A: np.ndarray):
    try:
        return scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesvd")


def truncated_pinv_solve(A: np.ndarray, Y: np.ndarray, rtol: float):
    """Minimal-norm least-squares solution of ``A X = Y`` discarding singular
    values below ``rtol * sigma_max``.

    Returns ``(X, singular_values, rank)``.
    """
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite values in least-squares problem")
    n_rows, n_cols = A.shape
    if n_rows >= 2 * (n_cols + Y.shape[1]):
        # tall problem: A = Q_a R_a leaves singular values and the minimal-norm
        # solution unchanged, and Q_a^T Y comes out of the same factorization
        Rf = scipy.linalg.qr(np.hstack([A, Y]), mode="r", check_finite=False)[0]
        A, Y = np.triu(Rf[:n_cols, :n_cols]), Rf[:n_cols, n_cols:]
    Q, s, Vt = _thin_svd(A)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((A.shape[1], Y.shape[1])), s, 0
    rank = int(np.count_nonzero(s > rtol * s[0]))
    X = Vt[:rank].T @ ((Q[:, :rank].T @ Y) / s[:rank, None])
    return X, s, rank


def truncated_pinv(A: np.ndarray, rtol: float):
    """Explicit pseudoinverse keeping singular values above ``rtol *
    sigma_max``. Returns ``(A_pinv, singular_values, rank)``."""
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite values in matrix")
    Q, s, Vt = _thin_svd(A)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape), s, 0
    rank = int(np.count_nonzero(s > rtol * s[0]))
    return (Vt[:rank].T / s[:rank]) @ Q[:, :rank].T, s, rank


def fit_naive(series, targets, config: VolterraConfig,
              max_elements: int = DEFAULT_MAX_ELEMENTS) -> VolterraModel:
    """``H = U^+ Y`` on the full Kronecker feature matrix, forming ``U^+``
    explicitly.

    The raw solution is kept in ``full_coefficients``; ``coefficients``
    holds its compression (average over permutation positions). When U is
    numerically rank deficient, roundoff in the weakest kept directions
    can make the raw H visibly non-symmetric.
    """
    u = _as_series(series)
    U = build_feature_matrix_full(u, config, max_elements=max_elements)
    Y = _aligned_targets(targets, u.shape[0], config.M)
    if not np.any(U):
        raise ValueError("feature matrix is identically zero")
    if not np.all(np.isfinite(Y)):
        raise ValueError("non-finite values in targets")
    tol = config.tolerance_for(U.shape[0])
    U_pinv, s, rank = truncated_pinv(U, tol)
    H = U_pinv @ Y
    basis = enumerate_monomials(config.I, config.D)
    config = replace(config, L=Y.shape[1])
    return VolterraModel(config, basis, compress(H, basis), s, rank, H)


def fit_symmetric(series, targets, config: VolterraConfig,
                  basis: Optional[MonomialBasis] = None) -> VolterraModel:
    """Minimal-norm symmetric solution without forming the I^D columns.

    With ``W = Uc diag(sqrt(c))`` the expanded coefficient norm equals
    ``||w||`` for ``w = sqrt(c) * h``, so ``w = W^+ Y`` reproduces the
    minimal-norm full solution.
    """
    u = _as_series(series)
    Uc, basis = build_feature_matrix_compressed(u, config, basis)
    Y = _aligned_targets(targets, u.shape[0], config.M)
    if not (np.all(np.isfinite(Uc)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite values in training data")
    root_c = np.sqrt(basis.multiplicities.astype(float))
    W = Uc * root_c
    tol = config.tolerance_for(W.shape[0])
    w, s, rank = truncated_pinv_solve(W, Y, tol)
    if rank == 0:
        raise np.linalg.LinAlgError("singular value cutoff removed every direction")
    config = replace(config, L=Y.shape[1])
    return VolterraModel(config, basis, w / root_c[:, None], s, rank)


def expand_full(model: VolterraModel,
                max_elements: int = DEFAULT_MAX_ELEMENTS) -> np.ndarray:
    """Scatter compressed coefficients to the full ``I^D x L`` matrix."""
    basis = model.basis
    total = basis.I**basis.D
    if total * model.coefficients.shape[1] > max_elements:
        raise MemoryError(f"expanded coefficient matrix has {total} rows")
    return model.coefficients[basis.positions()]


def compress(H, basis: MonomialBasis) -> np.ndarray:
    """Average each monomial's permutation positions of a full H."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    pos = basis.positions()
    sums = np.zeros((basis.R, H.shape[1]))
    np.add.at(sums, pos, H)
    return sums / basis.multiplicities[:, None]


def predict_open_loop(model: VolterraModel, series, n: int) -> np.ndarray:
    """Output at 1-based time ``n`` given the input history in ``series``."""
    ext = build_extended_input(series, n, model.config.M)
    return monomial_values(ext, model.basis) @ model.weighted_coefficients


def predict_series(model: VolterraModel, series) -> np.ndarray:
    """Open-loop outputs for every n = M..N."""
    Uc, _ = build_feature_matrix_compressed(series, model.config, model.basis)
    return Uc @ model.weighted_coefficients


def predict_closed_loop(model: VolterraModel, warmup_window, steps: int,
                        divergence_bound: float = 1e8) -> np.ndarray:
    """Autonomous rollout feeding each output back as the next input.

    Only the last M states of ``warmup_window`` are used. Once any state
    exceeds ``divergence_bound`` in magnitude the rest of the trajectory is
    NaN.
    """
    window = _as_series(warmup_window)
    return predict_closed_loop_batch(model, window[None], steps, divergence_bound)[0]


def predict_closed_loop_batch(model: VolterraModel, windows, steps: int,
                              divergence_bound: float = 1e8) -> np.ndarray:
    """Closed-loop rollouts from K warmup windows (K x n x P) at once."""
    cfg = model.config
    if cfg.L != cfg.P:
        raise ValueError(f"closed loop needs L == P (got L={cfg.L}, P={cfg.P})")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[2] != cfg.P:
        raise ValueError(f"windows must have shape (K, n, {cfg.P})")
    if windows.shape[1] < cfg.M:
        raise ValueError(f"warmup window needs at least M={cfg.M} states")
    K, P, M = windows.shape[0], cfg.P, cfg.M
    out = np.full((K, steps, P), np.nan)
    # ext[k] = (1, u(n), u(n-1), ..., u(n-M+1))
    ext = np.empty((K, P * M + 1))
    ext[:, 0] = 1.0
    ext[:, 1:] = windows[:, -M:][:, ::-1].reshape(K, P * M)
    idx = model.basis.indices
    wc = model.weighted_coefficients
    alive = np.ones(K, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            y = np.prod(ext[:, idx], axis=2) @ wc
            alive &= np.all(np.abs(y) <= divergence_bound, axis=1)
            if not alive.any():
                break
            y[~alive] = 0.0
            out[alive, t] = y[alive]
            ext[:, 1 + P:] = ext[:, 1:-P].copy()
            ext[:, 1:1 + P] = y
    return out


def model_to_dict(model: VolterraModel) -> dict:
    cfg = model.config
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "volterra",
        "config": {"M": cfg.M, "D": cfg.D, "P": cfg.P, "L": cfg.L},
        "svd_tolerance": cfg.svd_tolerance,
        "rank": model.rank,
        "coefficients": [[float(v) for v in row] for row in model.coefficients],
        "metadata": dict(model.metadata),
    }


def model_from_dict(data: dict) -> VolterraModel:
    if data.get("kind") != "volterra":
        raise ValueError(f"not a volterra model file (kind={data.get('kind')!r})")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {data.get('schema_version')}")
    cfg = VolterraConfig(svd_tolerance=data["svd_tolerance"], **data["config"])
    basis = enumerate_monomials(cfg.I, cfg.D)
    coef = np.array(data["coefficients"], dtype=float).reshape(basis.R, cfg.L)
    return VolterraModel(cfg, basis, coef, rank=data.get("rank"),
                         metadata=dict(data.get("metadata", {})))


def save_model(model: VolterraModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> VolterraModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
