"""Multi-class least-squares SVM fitted by solving its KKT equations.

For every binary subproblem ``l`` with targets ``y`` (restricted to samples
whose code is nonzero) the optimality conditions of

    min  1/2 (|w|^2 + b^2) + gamma/2 * sum_i e_i^2
    s.t. y_i (w . phi(x_i) + b) = 1 - e_i

are ``Omega alpha + y b = 1`` and ``b = y . alpha`` with
``Omega_ij = y_i y_j K(x_i, x_j) + delta_ij / gamma``. Eliminating ``b`` leaves
the SPD system ``(Omega + y y^T) alpha = 1``, solved by Cholesky.

Decision values are ``c_l(x) = sum_i alpha_i y_i K(x_i, x) + b_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding import CodingMatrix, build_coding_matrix, decode_scores, encode_labels
from .errors import DegenerateSubproblem, ShapeMismatch, UnsupportedKernelGradient
from .numerics import cholesky_factor, cholesky_solve_factor


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "linear"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.sigma > 0:
            raise ValueError("rbf sigma must be > 0")


@dataclass(frozen=True)
class LssvmConfig:
    gamma: float = 0.1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    coding: str = "ova"
    decode_mode: str = "linear"
    # b = scale * y.alpha; 1 is KKT-consistent, 0.5 reproduces a -2I bias block
    bias_stationarity_scale: float = 1.0
    coding_seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.bias_stationarity_scale > 0:
            raise ValueError("bias_stationarity_scale must be > 0")


def kernel_matrix(spec: KernelSpec, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    if xa.ndim != 2 or xb.ndim != 2 or xa.shape[1] != xb.shape[1]:
        raise ShapeMismatch(f"kernel inputs {xa.shape} and {xb.shape} disagree")
    gram = xa @ xb.T
    if spec.kind == "linear":
        return gram
    sq = np.sum(xa**2, axis=1)[:, None] + np.sum(xb**2, axis=1)[None, :] - 2.0 * gram
    if xa is xb:
        np.fill_diagonal(sq, 0.0)
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * spec.sigma**2))


def kernel_vjp(spec: KernelSpec, xa, xb, kmat, upstream):
    """Pull ``dL/dK`` back to ``(dL/dxa, dL/dxb)``."""
    if spec.kind == "linear":
        return upstream @ xb, upstream.T @ xa
    if spec.kind == "rbf":
        p = upstream * kmat / spec.sigma**2
        da = p @ xb - p.sum(axis=1)[:, None] * xa
        db = p.T @ xa - p.sum(axis=0)[:, None] * xb
        return da, db
    raise UnsupportedKernelGradient(spec.kind)


@dataclass
class KktBlock:
    active: np.ndarray  # indices of samples with nonzero code
    y: np.ndarray
    omega: np.ndarray
    system: np.ndarray  # omega + scale * y y^T


def assemble_kkt_blocks(support_x, encoded_y, config: LssvmConfig) -> list[KktBlock]:
    """Per-subproblem reduced systems (reference path, one block per column)."""
    x = np.asarray(support_x, dtype=np.float64)
    codes = np.asarray(encoded_y)
    k = kernel_matrix(config.kernel, x, x)
    s = config.bias_stationarity_scale
    blocks = []
    for l in range(codes.shape[1]):
        active = np.flatnonzero(codes[:, l])
        y = codes[active, l].astype(np.float64)
        if not (np.any(y > 0) and np.any(y < 0)):
            raise DegenerateSubproblem(f"subproblem {l} sees a single sign")
        omega = np.outer(y, y) * k[np.ix_(active, active)] + np.eye(len(active)) / config.gamma
        blocks.append(KktBlock(active, y, omega, omega + s * np.outer(y, y)))
    return blocks


@dataclass
class LssvmModel:
    """Fitted classifier. ``alpha`` is ``L x n`` and zero off each active set."""

    config: LssvmConfig
    coding: CodingMatrix
    support_x: np.ndarray
    encoded_y: np.ndarray  # n x L
    alpha: np.ndarray
    bias: np.ndarray
    active: np.ndarray  # L x n boolean
    kernel: np.ndarray = field(repr=False)
    factors: object = field(repr=False)  # factor of H, or one per subproblem
    beta: np.ndarray = field(repr=False)  # n x L, alpha * y

    def kkt_residuals(self) -> tuple[float, float]:
        """Max-norm residuals of ``Omega a + y b = 1`` and ``b = y.a`` over all l."""
        stat, bias_res = 0.0, 0.0
        s = self.config.bias_stationarity_scale
        for l in range(self.coding.l):
            act = np.flatnonzero(self.active[l])
            y = self.encoded_y[act, l].astype(np.float64)
            a = self.alpha[l, act]
            omega = np.outer(y, y) * self.kernel[np.ix_(act, act)] + np.eye(len(act)) / self.config.gamma
            stat = max(stat, np.abs(omega @ a + y * self.bias[l] - 1.0).max())
            bias_res = max(bias_res, abs(self.bias[l] - s * (y @ a)))
        return stat, bias_res


def fit_lssvm(
    support_x,
    support_y,
    config: LssvmConfig = LssvmConfig(),
    n_classes: int | None = None,
    coding: CodingMatrix | None = None,
) -> LssvmModel:
    """Solve every subproblem's reduced KKT system.

    With ``D = diag(y)`` the reduced matrix is ``G = D H D`` where
    ``H = K + s 11^T + I / gamma`` does not depend on the subproblem, so
    ``chol(G) = D chol(H) D`` and ``alpha * y = H^{-1} y``. One factor of ``H``
    (restricted to the active samples when codes contain zeros) serves all
    subproblems sharing an active set.
    """
    x = np.asarray(support_x, dtype=np.float64)
    labels = np.asarray(support_y, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ShapeMismatch("support_x must be n x d with one label per row")
    if coding is None:
        c = int(n_classes) if n_classes is not None else int(labels.max()) + 1
        rng = np.random.default_rng(config.coding_seed) if config.coding == "random" else None
        coding = build_coding_matrix(config.coding, c, rng)
    codes = encode_labels(coding, labels)
    y = codes.astype(np.float64)  # n x L
    active = codes != 0
    two_signed = (codes.max(axis=0) > 0) & (codes.min(axis=0) < 0)
    if not two_signed.all():
        bad = int(np.flatnonzero(~two_signed)[0])
        raise DegenerateSubproblem(f"subproblem {bad} sees a single sign")

    k = kernel_matrix(config.kernel, x, x)
    s = config.bias_stationarity_scale
    n = x.shape[0]
    h = k + s
    h.flat[:: n + 1] += 1.0 / config.gamma
    if active.all():
        factors = cholesky_factor(h)
        beta = cholesky_solve_factor(factors, y)
    else:
        factors = []
        beta = np.zeros_like(y)
        for l in range(y.shape[1]):
            act = np.flatnonzero(active[:, l])
            low = cholesky_factor(h[np.ix_(act, act)])
            factors.append(low)
            beta[act, l] = cholesky_solve_factor(low, y[act, l])
    alpha = (beta * y).T
    bias = s * beta.sum(axis=0)
    return LssvmModel(config, coding, x, codes, alpha, bias, active.T, k, factors, beta)


def decision_values(model: LssvmModel, query_x) -> np.ndarray:
    q = np.asarray(query_x, dtype=np.float64)
    kq = kernel_matrix(model.config.kernel, q, model.support_x)
    return kq @ model.beta + model.bias


def lssvm_predict(model: LssvmModel, query_x):
    """Returns ``(labels, class_scores)`` decoded with the configured mode."""
    return decode_scores(model.coding, decision_values(model, query_x), model.config.decode_mode)


def lssvm_scores(model: LssvmModel, query_x) -> np.ndarray:
    """Differentiable class scores ``c(x) @ M^T`` (linear decoding)."""
    return decision_values(model, query_x) @ model.coding.entries.T


def _solve_shared(model: LssvmModel, rhs: np.ndarray) -> np.ndarray:
    """Apply ``H^{-1}`` (restricted per subproblem) to an ``n x L`` right-hand side."""
    if isinstance(model.factors, np.ndarray):
        return cholesky_solve_factor(model.factors, rhs)
    out = np.zeros_like(rhs)
    for l, low in enumerate(model.factors):
        act = np.flatnonzero(model.active[l])
        out[act, l] = cholesky_solve_factor(low, rhs[act, l])
    return out


def lssvm_vjp(model: LssvmModel, query_x, grad_scores):
    """Gradients of a loss on ``lssvm_scores`` w.r.t. support and query features.

    The solve is differentiated implicitly: with ``G alpha = 1`` the adjoint
    is ``u = G^{-1} dalpha`` (reusing the stored factor) and ``dG = -u alpha^T``.
    In terms of ``beta = alpha * y`` this reads ``dK = -H^{-1} dbeta beta^T``.
    """
    q = np.asarray(query_x, dtype=np.float64)
    x = model.support_x
    spec = model.config.kernel
    if spec.kind not in ("linear", "rbf"):
        raise UnsupportedKernelGradient(spec.kind)
    s = model.config.bias_stationarity_scale
    dc = np.asarray(grad_scores, dtype=np.float64) @ model.coding.entries  # m x L
    kq = kernel_matrix(spec, q, x)
    dbeta = (kq + s).T @ dc  # n x L
    dbeta = np.where(model.active.T, dbeta, 0.0)
    dkq = dc @ model.beta.T  # m x n
    dk = -_solve_shared(model, dbeta) @ model.beta.T  # n x n
    dq, dx = kernel_vjp(spec, q, x, kq, dkq)
    da, db = kernel_vjp(spec, x, x, model.kernel, dk)
    return dx + da + db, dq
