# ---
# jupyter:
#   jupytext:
#     formats: py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
# ---

# # Tensor layout and symmetric features
#
# Multi-indices are 1-based with the first index running fastest, which
# matches a column-major ravel. Kronecker products follow ``np.kron``.

import numpy as np

from symvolterra.tensor_core import (DenseTensor, khatri_rao_rowwise, kron, mpo_entry,
                                     mpo_from_matrix, multi_index, symmetry_metric)

print(multi_index([1, 2, 2], [3, 3, 3]))
print(kron([1, 2], [3, 4]))

# Row-wise Khatri-Rao products of an extended input row give every degree-D
# product of its entries; the Volterra feature matrix is built this way.

u = np.array([[1.0, 0.5, -2.0]])
feat = khatri_rao_rowwise(u, khatri_rao_rowwise(u, u))
print(feat.shape, np.allclose(feat[0], np.kron(u[0], np.kron(u[0], u[0]))))

# A dense matrix factored into an operator chain reproduces its entries.

rng = np.random.default_rng(0)
X = rng.standard_normal((6, 4))
m = mpo_from_matrix(X, [2, 3], [2, 2])
print(mpo_entry(m, [2, 3], [1, 2]), X[multi_index([2, 3], [2, 3]) - 1,
                                       multi_index([1, 2], [2, 2]) - 1])

# The symmetry metric vanishes for permutation-invariant tensors.

t = rng.standard_normal((3, 3))
print(symmetry_metric(t + t.T), symmetry_metric(DenseTensor.from_array(t)))
