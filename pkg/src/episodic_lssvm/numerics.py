"""Dense numerics: SPD solves, row-wise softmax / layer norm, and 2-D PCA.

Matrices are plain ``float64`` numpy arrays. The helpers here are pure
functions and never modify their inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from .errors import DegenerateInput, NotPositiveDefinite, ShapeMismatch

PIVOT_FLOOR = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate ``x`` as a finite 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def cholesky_factor(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix (LAPACK ``potrf``).

    Raises NotPositiveDefinite when a pivot (squared diagonal of the factor)
    falls to ``PIVOT_FLOOR`` or below.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"expected square matrix, got {a.shape}")
    low, info = lapack.dpotrf(a, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"factorization failed at pivot {info}")
    pivot = np.min(np.diagonal(low)) ** 2
    if pivot <= PIVOT_FLOOR:
        raise NotPositiveDefinite(f"pivot {pivot:.3e} below floor")
    return low


def cholesky_solve_factor(low: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = rhs`` given the lower factor."""
    x, info = lapack.dpotrs(low, rhs, lower=1)
    if info != 0:
        raise ShapeMismatch(f"potrs rejected its arguments (info={info})")
    return x


def cholesky_solve(a, rhs) -> np.ndarray:
    """Solve ``a @ x = rhs`` for symmetric positive definite ``a``.

    ``rhs`` may be a vector or an ``n x m`` matrix; the result has the same
    shape as ``rhs``.
    """
    a = as_matrix(a, "a")
    b = np.asarray(rhs, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    n = a.shape[0]
    if a.shape != (n, n) or n < 1:
        raise ShapeMismatch(f"a must be square and nonempty, got {a.shape}")
    if b.shape[0] != n:
        raise ShapeMismatch(f"rhs has {b.shape[0]} rows, a has {n}")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-10 * scale:
        raise ShapeMismatch("a is not symmetric")
    x = cholesky_solve_factor(cholesky_factor(a), b)
    return x[:, 0] if vector else x


def softmax_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    z = np.exp(m - m.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_rows_vjp(p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``p``."""
    return p * (upstream - np.sum(upstream * p, axis=-1, keepdims=True))


def layer_norm_rows(m, gain, bias, eps: float = 1e-5) -> np.ndarray:
    return layer_norm_forward(m, gain, bias, eps)[0]


def layer_norm_forward(m, gain, bias, eps: float = 1e-5):
    """Row-wise layer norm returning ``(out, cache)``.

    Rows with zero spread normalize to exactly zero (then gain/bias apply).
    """
    m = np.asarray(m, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if m.ndim != 2 or gain.shape != (m.shape[1],) or bias.shape != (m.shape[1],):
        raise ShapeMismatch(
            f"layer norm shapes: m {m.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    centered = m - m.mean(axis=1, keepdims=True)
    constant = (m.max(axis=1) == m.min(axis=1))[:, None]
    centered = np.where(constant, 0.0, centered)
    inv_std = 1.0 / np.sqrt(np.mean(centered**2, axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    return xhat * gain + bias, (xhat, inv_std, gain)


def layer_norm_vjp(cache, upstream: np.ndarray):
    """Returns ``(d_input, d_gain, d_bias)``."""
    xhat, inv_std, gain = cache
    d_gain = np.sum(upstream * xhat, axis=0)
    d_bias = np.sum(upstream, axis=0)
    g = upstream * gain
    d_in = inv_std * (
        g - g.mean(axis=1, keepdims=True) - xhat * np.mean(g * xhat, axis=1, keepdims=True)
    )
    return d_in, d_gain, d_bias


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by descending eigenvalue;
    eigenvectors are the columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a**2) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def pca_fit(points, rank_tol: float = 1e-10):
    """Fit a 2-D PCA model. Returns ``(mean, components[d x 2], eigenvalues)``."""
    x = as_matrix(points, "points")
    m, d = x.shape
    if m < 3 or d < 2:
        raise DegenerateInput(f"need at least 3 points of dim >= 2, got {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / m
    vals, vecs = jacobi_eigh(cov)
    if vals[0] <= 0.0 or vals[1] <= rank_tol * vals[0]:
        raise DegenerateInput("covariance has rank < 2")
    comps = vecs[:, :2].copy()
    for j in range(2):
        k = np.argmax(np.abs(comps[:, j]))
        if comps[k, j] < 0:
            comps[:, j] = -comps[:, j]
    return mean, comps, vals


def pca_2d(points) -> np.ndarray:
    """Project ``points`` onto their top two principal axes."""
    mean, comps, _ = pca_fit(points)
    return (as_matrix(points) - mean) @ comps
