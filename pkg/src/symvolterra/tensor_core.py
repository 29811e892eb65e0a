"""Dense tensor utilities.

All linearizations in this package use the little-endian multi-index
convention: the *first* index runs fastest, i.e.

    [i_1 i_2 ... i_D] = i_1 + sum_{d>=2} (i_d - 1) * prod_{m<d} I_m

with 1-based indices. Internally buffers are plain numpy arrays in
Fortran order, so ``vec(X) == X.ravel(order="F")``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_SYMMETRY_ORDER = 8


def multi_index(indices: Sequence[int], extents: Sequence[int]) -> int:
    """Convert 1-based indices ``(i_1, ..., i_D)`` to a 1-based linear index."""
    if len(indices) != len(extents):
        raise ValueError(
            f"got {len(indices)} indices for {len(extents)} extents"
        )
    if len(indices) == 0:
        raise ValueError("at least one index is required")
    linear = 0
    stride = 1
    for i, extent in zip(indices, extents):
        if not 1 <= i <= extent:
            raise IndexError(f"index {i} out of range 1..{extent}")
        linear += (i - 1) * stride
        stride *= extent
    return linear + 1


def split_index(linear: int, extents: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`multi_index`."""
    total = math.prod(extents)
    if not 1 <= linear <= total:
        raise IndexError(f"linear index {linear} out of range 1..{total}")
    rest = linear - 1
    out = []
    for extent in extents:
        rest, i = divmod(rest, extent)
        out.append(i + 1)
    return tuple(out)


@dataclass(frozen=True)
class DenseTensor:
    """A D-th order array stored as a flat buffer, first index fastest."""

    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if any(s < 1 for s in shape):
            raise ValueError(f"extents must be positive, got {shape}")
        data = np.asarray(self.data, dtype=float).ravel()
        if data.size != math.prod(shape):
            raise ValueError(
                f"buffer of length {data.size} does not match shape {shape}"
            )
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "DenseTensor":
        array = np.asarray(array, dtype=float)
        return cls(array.shape, array.ravel(order="F"))

    @property
    def order(self) -> int:
        return len(self.shape)

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.shape, order="F")

    def entry(self, *indices: int) -> float:
        """Element lookup with 1-based indices."""
        return float(self.data[multi_index(indices, self.shape) - 1])


def reshape(t: DenseTensor, new_shape: Sequence[int]) -> DenseTensor:
    """Reinterpret the buffer of ``t`` with a new shape (no data movement)."""
    new_shape = tuple(int(s) for s in new_shape)
    if math.prod(new_shape) != t.data.size:
        raise ValueError(
            f"cannot reshape {t.shape} ({t.data.size} entries) to {new_shape}"
        )
    return DenseTensor(new_shape, t.data)


def vec(t: DenseTensor) -> np.ndarray:
    return t.data.copy()


def kron(a, b) -> np.ndarray:
    """Kronecker product of two vectors.

    Entry ``a(i) * b(j)`` sits at the 1-based multi-index ``[j i]`` (the
    index of the right factor runs fastest), which is the usual
    ``np.kron`` layout.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("kron of an empty vector")
    return (a[:, None] * b[None, :]).ravel()


def khatri_rao_rowwise(A, B) -> np.ndarray:
    """Row-wise Khatri-Rao product: row n is ``kron(A[n], B[n])``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != B.shape[0]:
        raise ValueError(
            f"row counts differ: {A.shape[0]} vs {B.shape[0]}"
        )
    n = A.shape[0]
    return (A[:, :, None] * B[:, None, :]).reshape(n, A.shape[1] * B.shape[1])


@dataclass(frozen=True)
class MPO:
    """Matrix product operator: cores of shape ``(R_d, I_d, J_d, R_{d+1})``.

    The chain is open, with ``R_1 = R_{D+1} = 1``.
    """

    cores: tuple[np.ndarray, ...]

    def __post_init__(self):
        cores = tuple(np.asarray(c, dtype=float) for c in self.cores)
        if not cores:
            raise ValueError("an MPO needs at least one core")
        for d, core in enumerate(cores):
            if core.ndim != 4:
                raise ValueError(f"core {d} has order {core.ndim}, expected 4")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise ValueError("boundary bond dimensions must be 1")
        for d in range(len(cores) - 1):
            if cores[d].shape[3] != cores[d + 1].shape[0]:
                raise ValueError(
                    f"bond mismatch between cores {d} and {d + 1}: "
                    f"{cores[d].shape[3]} != {cores[d + 1].shape[0]}"
                )
        object.__setattr__(self, "cores", cores)

    @property
    def row_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores) + (1,)


def mpo_entry(m: MPO, row_indices: Sequence[int], col_indices: Sequence[int]) -> float:
    """Evaluate ``X([i_1..i_D], [j_1..j_D])`` by contracting the core chain.

    Indices are 1-based.
    """
    D = len(m.cores)
    if len(row_indices) != D or len(col_indices) != D:
        raise ValueError(f"expected {D} row and column indices")
    acc = np.ones((1, 1))
    for core, i, j in zip(m.cores, row_indices, col_indices):
        if not (1 <= i <= core.shape[1] and 1 <= j <= core.shape[2]):
            raise IndexError(f"index pair ({i}, {j}) out of range for core {core.shape}")
        acc = acc @ core[:, i - 1, j - 1, :]
    return float(acc[0, 0])


def mpo_from_vectors(row_vectors: Sequence, col_vectors: Sequence) -> MPO:
    """Rank-1 MPO whose core d is the outer product of ``row_vectors[d]``
    and ``col_vectors[d]``."""
    if len(row_vectors) != len(col_vectors):
        raise ValueError("need one column vector per row vector")
    cores = []
    for a, b in zip(row_vectors, col_vectors):
        outer = np.outer(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        cores.append(outer[None, :, :, None])
    return MPO(tuple(cores))


def mpo_from_matrix(X, row_dims: Sequence[int], col_dims: Sequence[int]) -> MPO:
    """Exact (untruncated) MPO of a small explicit matrix.

    The first D-1 cores are 0/1 selectors that carry the already-seen index
    pairs along the bond; the last core holds the reshaped matrix entries.
    Bond dimensions grow as ``prod_{m<d} I_m J_m``, so this is only meant
    for structural checks on small matrices.
    """
    X = np.asarray(X, dtype=float)
    row_dims = tuple(int(i) for i in row_dims)
    col_dims = tuple(int(j) for j in col_dims)
    if len(row_dims) != len(col_dims):
        raise ValueError("row_dims and col_dims must have equal length")
    if X.shape != (math.prod(row_dims), math.prod(col_dims)):
        raise ValueError(f"matrix shape {X.shape} does not match dims")
    D = len(row_dims)
    # X(i_1..i_D, j_1..j_D), first index fastest on both sides
    T = X.reshape(row_dims[::-1] + col_dims[::-1], order="C")
    T = T.transpose(tuple(range(D - 1, -1, -1)) + tuple(range(2 * D - 1, D - 1, -1)))
    # interleave to (i_1, j_1, i_2, j_2, ...)
    T = T.transpose(tuple(itertools.chain.from_iterable((d, D + d) for d in range(D))))

    cores = []
    bond = 1
    for d in range(D - 1):
        I, J = row_dims[d], col_dims[d]
        core = np.zeros((bond, I, J, bond * I * J))
        for r in range(bond):
            for i in range(I):
                for j in range(J):
                    core[r, i, j, r + bond * (i + I * j)] = 1.0
        cores.append(core)
        bond *= I * J
    I, J = row_dims[-1], col_dims[-1]
    # bond index r = sum_d (i_d + I_d j_d) * prod_{m<d} I_m J_m, first pair fastest
    last = T.reshape((bond, I, J, 1), order="F")
    cores.append(last)
    return MPO(tuple(cores))


def symmetry_metric(t) -> float:
    """Sum of Frobenius distances between a cubic tensor and all of its
    index permutations (lexicographic order, identity included)."""
    array = t.to_array() if isinstance(t, DenseTensor) else np.asarray(t, dtype=float)
    D = array.ndim
    if D < 1:
        raise ValueError("symmetry metric needs a tensor of order >= 1")
    if D > MAX_SYMMETRY_ORDER:
        raise ValueError(
            f"order {D} exceeds the enumeration cap of {MAX_SYMMETRY_ORDER}"
        )
    if len(set(array.shape)) != 1:
        raise ValueError(f"tensor is not cubic: shape {array.shape}")
    return float(
        sum(
            np.linalg.norm(array - array.transpose(p))
            for p in itertools.permutations(range(D))
        )
    )


def symmetrize(t) -> np.ndarray:
    """Average of a cubic tensor over all index permutations."""
    array = t.to_array() if isinstance(t, DenseTensor) else np.asarray(t, dtype=float)
    perms = list(itertools.permutations(range(array.ndim)))
    return sum(array.transpose(p) for p in perms) / len(perms)
