import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from episodic_lssvm.errors import DegenerateInput, NotPositiveDefinite, ShapeMismatch
from episodic_lssvm.numerics import (
    cholesky_solve,
    jacobi_eigh,
    layer_norm_forward,
    layer_norm_rows,
    layer_norm_vjp,
    pca_2d,
    pca_fit,
    softmax_rows,
    softmax_rows_vjp,
)

from conftest import central_diff, rel_err


def gauss_jordan_solve(a, b):
    """Independent oracle: Gauss-Jordan elimination with partial pivoting."""
    n = len(a)
    aug = np.hstack([np.array(a, float), np.array(b, float).reshape(n, -1)])
    for col in range(n):
        piv = col + np.argmax(np.abs(aug[col:, col]))
        aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, n:]


def random_spd(rng, n):
    m = rng.normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def test_cholesky_identity_and_diagonal():
    np.testing.assert_allclose(cholesky_solve(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_allclose(cholesky_solve([[4.0, 0], [0, 9.0]], [8.0, 27.0]), [2, 3])


def test_cholesky_matches_gauss_jordan():
    rng = np.random.default_rng(7)
    a = random_spd(rng, 10)
    b = rng.normal(size=(10, 3))
    x = cholesky_solve(a, b)
    np.testing.assert_allclose(x, gauss_jordan_solve(a, b), atol=1e-12)
    assert np.abs(a @ x - b).max() < 1e-10


def test_cholesky_rejects_bad_input():
    with pytest.raises(NotPositiveDefinite):
        cholesky_solve([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])
    with pytest.raises(NotPositiveDefinite):
        cholesky_solve([[1e-14, 0.0], [0.0, 1.0]], [1.0, 1.0])
    with pytest.raises(ShapeMismatch):
        cholesky_solve(np.eye(3), np.ones(2))
    with pytest.raises(ShapeMismatch):
        cholesky_solve([[1.0, 0.5], [0.0, 1.0]], [1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_cholesky_residual_property(n, seed):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, n)
    b = rng.normal(size=(n, 2))
    x = cholesky_solve(a, b)
    assert np.abs(a @ x - b).max() <= 1e-9 * max(1.0, np.abs(b).max())


def test_softmax_examples():
    np.testing.assert_allclose(softmax_rows([[0.0, 0, 0]]), [[1 / 3] * 3])
    np.testing.assert_allclose(softmax_rows([[1e3, 1e3, 1e3]]), [[1 / 3] * 3])
    np.testing.assert_allclose(softmax_rows([[np.log(2.0), 0.0]]), [[2 / 3, 1 / 3]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_rows_sum_to_one(seed):
    m = np.random.default_rng(seed).normal(scale=30, size=(4, 6))
    p = softmax_rows(m)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_vjp_finite_difference(rng):
    m = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    analytic = softmax_rows_vjp(softmax_rows(m), w)
    numeric = central_diff(lambda: float(np.sum(softmax_rows(m) * w)), m)
    assert rel_err(analytic, numeric) < 1e-7


def test_layer_norm_examples():
    np.testing.assert_array_equal(layer_norm_rows([[5.0, 5, 5]], np.ones(3), np.zeros(3)), [[0, 0, 0]])
    np.testing.assert_allclose(layer_norm_rows([[-1.0, 1.0]], np.ones(2), np.zeros(2), eps=1e-14), [[-1, 1]], atol=1e-12)
    row = np.array([[0.0, 2.0, 4.0]])
    direct = 2.0 * (row - 2.0) / np.sqrt(8.0 / 3.0 + 1e-5) + 1.0
    np.testing.assert_allclose(layer_norm_rows(row, np.full(3, 2.0), np.ones(3)), direct, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_layer_norm_moments_and_idempotence(seed):
    # unit variance holds up to eps; a tiny eps exposes the exact identity
    m = np.random.default_rng(seed).normal(scale=3, size=(5, 7))
    out = layer_norm_rows(m, np.ones(7), np.zeros(7), eps=1e-12)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-6)
    again = layer_norm_rows(out, np.ones(7), np.zeros(7), eps=1e-12)
    np.testing.assert_allclose(again, out, atol=1e-6)


def test_layer_norm_vjp_finite_difference(rng):
    m = rng.normal(size=(3, 5))
    g, b = rng.normal(size=5), rng.normal(size=5)
    w = rng.normal(size=(3, 5))
    _, cache = layer_norm_forward(m, g, b)
    d_in, d_g, d_b = layer_norm_vjp(cache, w)
    f = lambda: float(np.sum(layer_norm_rows(m, g, b) * w))
    assert rel_err(d_in, central_diff(f, m)) < 1e-6
    assert rel_err(d_g, central_diff(f, g)) < 1e-7
    assert rel_err(d_b, central_diff(f, b)) < 1e-7


def test_jacobi_matches_dense_eigensolver(rng):
    a = random_spd(rng, 9) - 5 * np.eye(9)
    vals, vecs = jacobi_eigh(a)
    ref = np.linalg.eigvalsh(a)[::-1]
    np.testing.assert_allclose(vals, ref, atol=1e-10)
    np.testing.assert_allclose(a @ vecs, vecs * vals, atol=1e-9)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(9), atol=1e-10)


def pairwise(p):
    return np.linalg.norm(p[:, None] - p[None, :], axis=2)


def test_pca_preserves_2d_distances(rng):
    pts = rng.normal(size=(30, 2)) * [5.0, 0.5]
    np.testing.assert_allclose(pairwise(pca_2d(pts)), pairwise(pts), atol=1e-8)


def test_pca_preserves_planar_3d_distances(rng):
    coef = rng.normal(size=(25, 2)) * [3.0, 1.0]
    basis = np.linalg.qr(rng.normal(size=(3, 2)))[0]
    pts = coef @ basis.T + [1.0, -2.0, 0.5]
    np.testing.assert_allclose(pairwise(pca_2d(pts)), pairwise(pts), atol=1e-8)


def test_pca_variance_ratio_matches_eigensolver():
    pts = np.random.default_rng(3).normal(size=(200, 16)) * np.linspace(3, 0.5, 16)
    proj = pca_2d(pts)
    cov = np.cov(pts.T, bias=True)
    ev = np.linalg.eigvalsh(cov)[::-1]
    captured = proj.var(axis=0).sum() / pts.var(axis=0).sum()
    np.testing.assert_allclose(captured, ev[:2].sum() / ev.sum(), atol=1e-10)


def test_pca_sign_convention_and_degenerate(rng):
    _, comps, _ = pca_fit(rng.normal(size=(20, 4)))
    for j in range(2):
        assert comps[np.argmax(np.abs(comps[:, j])), j] > 0
    with pytest.raises(DegenerateInput):
        pca_fit(np.outer(np.arange(10.0), [1.0, 2.0, 3.0]))
    with pytest.raises(DegenerateInput):
        pca_fit(np.ones((2, 3)))
