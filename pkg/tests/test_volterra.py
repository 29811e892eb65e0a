import itertools
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from symvolterra import volterra
from symvolterra.tensor_core import symmetry_metric
from symvolterra.volterra import VolterraConfig, VolterraModel


def explicit_kron_rows(u, M, D):
    """Oracle: D-fold np.kron of each extended input, built row by row."""
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    rows = []
    for n in range(M, u.shape[0] + 1):
        ext = np.concatenate(([1.0], u[n - M:n][::-1].ravel()))
        r = ext
        for _ in range(D - 1):
            r = np.kron(r, ext)
        rows.append(r)
    return np.array(rows)


def test_config_invariants():
    cfg = VolterraConfig(M=4, D=4, P=1)
    assert cfg.I == 5 and cfg.R == 70
    assert VolterraConfig(M=4, D=4, P=4).R == 4845
    assert cfg.tolerance_for(100) == pytest.approx(1e-9)
    with pytest.raises(ValueError):
        VolterraConfig(M=0, D=2)
    with pytest.raises(ValueError):
        VolterraConfig(M=1, D=2, svd_tolerance=1.5)


def test_extended_input():
    np.testing.assert_array_equal(volterra.build_extended_input([5, 7], 2, 2), [1, 7, 5])
    u = np.array([[1, 2], [3, 4], [5, 6]])
    np.testing.assert_array_equal(volterra.build_extended_input(u, 3, 2), [1, 5, 6, 3, 4])
    with pytest.raises(ValueError):
        volterra.build_extended_input([5, 7], 1, 2)
    np.testing.assert_array_equal(volterra.extended_input_matrix(u, 2)[1], [1, 5, 6, 3, 4])


def test_full_feature_matrix_examples(rng):
    U = volterra.build_feature_matrix_full([2.0], VolterraConfig(M=1, D=2))
    np.testing.assert_array_equal(U, [[1, 2, 2, 4]])
    u = rng.uniform(size=(20, 2))
    cfg = VolterraConfig(M=3, D=1, P=2)
    np.testing.assert_array_equal(volterra.build_feature_matrix_full(u, cfg),
                                  volterra.extended_input_matrix(u, 3))
    cfg = VolterraConfig(M=2, D=3, P=2)
    np.testing.assert_allclose(volterra.build_feature_matrix_full(u, cfg),
                               explicit_kron_rows(u, 2, 3), rtol=0, atol=1e-15)
    with pytest.raises(MemoryError):
        volterra.build_feature_matrix_full(u, cfg, max_elements=100)


def test_enumerate_monomials_examples():
    b = volterra.enumerate_monomials(2, 2)
    assert b.entries == [(1, 1), (1, 2), (2, 2)]
    np.testing.assert_array_equal(b.multiplicities, [1, 2, 1])
    assert volterra.enumerate_monomials(5, 4).R == 70
    assert volterra.enumerate_monomials(17, 4).R == 4845
    with pytest.raises(ValueError):
        volterra.enumerate_monomials(0, 2)


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(1, 4))
def test_monomial_basis_invariants(I, D):
    b = volterra.enumerate_monomials(I, D)
    assert b.R == math.comb(I - 1 + D, D)
    assert int(b.multiplicities.sum()) == I**D
    assert b.entries == sorted(set(b.entries))
    assert all(list(e) == sorted(e) for e in b.entries)
    # brute force: count positions of each multiset in the full index box
    counts = {}
    for idx in itertools.product(range(I), repeat=D):
        key = tuple(sorted(idx))
        counts[key] = counts.get(key, 0) + 1
    assert [counts[tuple(row)] for row in b.indices.tolist()] == b.multiplicities.tolist()
    pos = b.positions()
    for k, idx in enumerate(itertools.product(range(I), repeat=D)):
        assert tuple(b.indices[pos[k]]) == tuple(sorted(idx))


def test_compressed_matrix_examples(rng):
    Uc, b = volterra.build_feature_matrix_compressed([2.0], VolterraConfig(M=1, D=2))
    np.testing.assert_array_equal(Uc, [[1, 2, 4]])
    np.testing.assert_array_equal(b.multiplicities, [1, 2, 1])
    u = rng.uniform(size=(30, 2))
    cfg = VolterraConfig(M=2, D=3, P=2)
    Uc, b = volterra.build_feature_matrix_compressed(u, cfg)
    np.testing.assert_array_equal(Uc[:, 0], 1.0)
    # Uc diag(c) h == U vec(H_sym) for a random symmetric H
    h = rng.standard_normal((b.R, 1))
    H = h[b.positions()]
    U = explicit_kron_rows(u, 2, 3)
    np.testing.assert_allclose(Uc @ (b.multiplicities[:, None] * h), U @ H, rtol=1e-12, atol=1e-12)


def test_fit_naive_zero_targets(rng):
    u = rng.uniform(size=40)
    m = volterra.fit_naive(u, np.zeros(40), VolterraConfig(M=2, D=2))
    np.testing.assert_array_equal(m.full_coefficients, 0.0)


def test_fit_naive_memory_task(rng):
    u = rng.uniform(size=103)
    y = np.concatenate(([0.0], u[:-1]))
    cfg = VolterraConfig(M=4, D=4)
    m = volterra.fit_naive(u, y, cfg)
    U = explicit_kron_rows(u, 4, 4)
    H = m.full_coefficients
    assert np.linalg.norm(U @ H - y[3:, None]) / np.linalg.norm(y[3:]) <= 1e-8
    assert symmetry_metric(H[:, 0].reshape((5,) * 4)) <= 1e-8


def test_fit_symmetric_matches_naive_example(rng):
    u = rng.uniform(size=40)
    y = 0.3 + 2.0 * u - 0.7 * np.roll(u, 1)
    cfg = VolterraConfig(M=2, D=2)
    Hn = volterra.fit_naive(u, y, cfg).full_coefficients
    Hs = volterra.expand_full(volterra.fit_symmetric(u, y, cfg))
    assert np.linalg.norm(Hn - Hs) / np.linalg.norm(Hn) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([(1, 1, 2), (1, 2, 2), (2, 2, 2), (1, 3, 3), (2, 1, 3), (3, 2, 2)]),
       st.integers(15, 80), st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_solver_equivalence(pmd, N, L, seed):
    P, M, D = pmd
    r = np.random.default_rng(seed)
    u = r.uniform(size=(N, P))
    y = r.standard_normal((N, L))
    cfg = VolterraConfig(M=M, D=D, P=P, L=L)
    Hn = volterra.fit_naive(u, y, cfg).full_coefficients
    Hs = volterra.expand_full(volterra.fit_symmetric(u, y, cfg))
    assert np.linalg.norm(Hn - Hs) <= 1e-8 * max(np.linalg.norm(Hn), 1e-300)


def test_fit_symmetric_rank_and_zero_targets(rng):
    u = rng.uniform(size=103)
    cfg = VolterraConfig(M=4, D=4)
    m = volterra.fit_symmetric(u, rng.standard_normal(103), cfg)
    assert m.rank == 70
    z = volterra.fit_symmetric(u, np.zeros(103), cfg)
    np.testing.assert_array_equal(z.coefficients, 0.0)
    X, s, rank = volterra.truncated_pinv_solve(np.zeros((5, 3)), np.ones((5, 1)), 1e-10)
    assert rank == 0 and not np.any(X)
    with pytest.raises(ValueError):
        volterra.fit_symmetric(np.full(20, np.nan), np.ones(20), VolterraConfig(M=1, D=2))


def test_minimal_norm_against_null_space(rng):
    # underdetermined: N rows < R columns, so W has a null space
    u = rng.uniform(size=20)
    y = rng.standard_normal(20)
    cfg = VolterraConfig(M=3, D=3)
    m = volterra.fit_symmetric(u, y, cfg)
    Uc, b = volterra.build_feature_matrix_compressed(u, cfg)
    c = b.multiplicities.astype(float)
    W = Uc * np.sqrt(c)
    null = scipy.linalg.null_space(W)
    assert null.shape[1] > 0
    h = m.coefficients[:, 0]
    base = np.sum(c * h**2)
    for k in range(min(5, null.shape[1])):
        h2 = h + 0.1 * null[:, k] / np.sqrt(c)
        np.testing.assert_allclose(Uc @ (c * h2), Uc @ (c * h), atol=1e-10)
        assert np.sum(c * h2**2) > base


def test_expand_and_compress():
    b = volterra.enumerate_monomials(2, 2)
    m = VolterraModel(VolterraConfig(M=1, D=2), b, np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_array_equal(volterra.expand_full(m)[:, 0], [1, 2, 2, 3])
    np.testing.assert_array_equal(volterra.compress(volterra.expand_full(m), b), m.coefficients)
    assert symmetry_metric(volterra.expand_full(m)[:, 0].reshape(2, 2)) == 0.0


def _model(coef, M=2, D=2, P=1):
    cfg = VolterraConfig(M=M, D=D, P=P, L=P)
    b = volterra.enumerate_monomials(cfg.I, D)
    return VolterraModel(cfg, b, np.asarray(coef, dtype=float).reshape(b.R, P))


def test_predict_open_loop(rng):
    coef = np.zeros(6)
    coef[0] = 4.2
    m = _model(coef)
    assert volterra.predict_open_loop(m, rng.standard_normal(10), 5)[0] == pytest.approx(4.2)
    m = _model(rng.standard_normal(6))
    u = rng.standard_normal(10)
    H = volterra.expand_full(m)
    U = explicit_kron_rows(u, 2, 2)
    np.testing.assert_allclose(volterra.predict_series(m, u), U @ H, rtol=1e-12)
    assert volterra.predict_open_loop(m, u, 10)[0] == pytest.approx((U @ H)[-1, 0])


def test_memory_model_generalizes(rng):
    u = rng.uniform(size=200)
    y = np.concatenate(([0.0], u[:-1]))
    m = volterra.fit_symmetric(u[:100], y[:100], VolterraConfig(M=4, D=4))
    for n in range(150, 200):
        assert abs(volterra.predict_open_loop(m, u, n)[0] - u[n - 2]) <= 1e-6


def test_prediction_linear_in_coefficients(rng):
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    u = rng.standard_normal(12)
    pa = volterra.predict_series(_model(a), u)
    pb = volterra.predict_series(_model(b), u)
    np.testing.assert_allclose(volterra.predict_series(_model(a + b), u), pa + pb, atol=1e-12)


def test_closed_loop_basic(rng):
    m = _model(rng.standard_normal(6))
    assert volterra.predict_closed_loop(m, [0.1, 0.2], 0).shape == (0, 1)
    # identity map y(n) = u(n): coefficient of the linear monomial (1, u(n))
    b = volterra.enumerate_monomials(3, 2)
    coef = np.zeros(b.R)
    coef[b.entries.index((1, 2))] = 0.5  # multiplicity 2
    ident = VolterraModel(VolterraConfig(M=2, D=2), b, coef[:, None])
    np.testing.assert_allclose(volterra.predict_closed_loop(ident, [0.3, -1.7], 5), -1.7)
    with pytest.raises(ValueError):
        volterra.predict_closed_loop(ident, [0.3], 5)
    bad = VolterraModel(VolterraConfig(M=2, D=2, L=2), b, np.zeros((b.R, 2)))
    with pytest.raises(ValueError):
        volterra.predict_closed_loop(bad, [0.3, 0.1], 5)


def test_closed_loop_matches_manual_feedback(rng):
    m = _model(0.1 * rng.standard_normal(volterra.enumerate_monomials(5, 2).R * 2),
               M=2, D=2, P=2)
    hist = rng.standard_normal((6, 2))
    out = volterra.predict_closed_loop(m, hist, 8)
    buf = list(hist)
    for k in range(8):
        y = volterra.predict_open_loop(m, np.array(buf), len(buf))
        np.testing.assert_allclose(out[k], y, rtol=1e-12, atol=1e-14)
        buf.append(y)


def test_closed_loop_divergence_is_nan():
    b = volterra.enumerate_monomials(2, 2)
    m = VolterraModel(VolterraConfig(M=1, D=2), b, np.array([[0.0], [0.0], [1.0]]))
    out = volterra.predict_closed_loop(m, [3.0], 20)
    assert np.isfinite(out[0, 0])
    assert np.isnan(out[-1, 0])
    assert np.all(np.abs(out[np.isfinite(out)]) <= 1e8)


def test_batch_closed_loop_matches_single(rng):
    m = _model(0.2 * rng.standard_normal(volterra.enumerate_monomials(7, 2).R * 2),
               M=3, D=2, P=2)
    windows = rng.standard_normal((4, 5, 2))
    batch = volterra.predict_closed_loop_batch(m, windows, 10)
    for k in range(4):
        # batched and single rollouts go through different BLAS kernels
        np.testing.assert_allclose(batch[k], volterra.predict_closed_loop(m, windows[k], 10),
                                   rtol=1e-12, atol=1e-12)


def test_trained_lorenz_closed_loop_stays_bounded(lorenz):
    train = lorenz.points[1000:6000]
    m = volterra.fit_symmetric(train[:-1], train[1:], VolterraConfig(M=3, D=3, P=3, L=3))
    out = volterra.predict_closed_loop(m, train, 5000)
    lo, hi = train.min(axis=0), train.max(axis=0)
    centre, half = (lo + hi) / 2, (hi - lo) / 2
    assert np.all(np.isfinite(out))
    assert np.all(np.abs(out - centre) <= 1.5 * half)


def test_json_round_trip(tmp_path, rng):
    u = rng.uniform(size=(60, 2))
    m = volterra.fit_symmetric(u, u, VolterraConfig(M=2, D=2, P=2, L=2))
    path = tmp_path / "m.json"
    volterra.save_model(m, path)
    back = volterra.load_model(path)
    np.testing.assert_array_equal(back.coefficients, m.coefficients)
    assert back.config == m.config
    with pytest.raises(ValueError):
        volterra.model_from_dict({"kind": "esn"})
