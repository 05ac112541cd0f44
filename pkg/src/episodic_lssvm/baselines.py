"""Base learners behind one fit/score contract: prototype NN, ridge, LS-SVM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import KindMismatch, ShapeMismatch
from .lssvm import LssvmConfig, LssvmModel, fit_lssvm, lssvm_predict
from .numerics import cholesky_factor, cholesky_solve_factor

LEARNER_KINDS = ("nn", "rr", "lssvm")


@dataclass(frozen=True)
class BaseLearnerSpec:
    kind: str = "lssvm"
    ridge_lambda: float = 1.0
    lssvm: LssvmConfig = field(default_factory=LssvmConfig)

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner {self.kind!r}")
        if not self.ridge_lambda > 0:
            raise ValueError("ridge_lambda must be > 0")


@dataclass
class PrototypeModel:
    prototypes: np.ndarray  # C x d


@dataclass
class RidgeModel:
    support_x: np.ndarray
    dual: np.ndarray  # n x C, (K + lambda I)^{-1} T


def _one_hot(labels, n_classes):
    return np.eye(n_classes)[labels]


def fit_prototype_nn(support_x, support_y, n_classes: int | None = None) -> PrototypeModel:
    x = np.asarray(support_x, dtype=np.float64)
    y = np.asarray(support_y, dtype=np.int64)
    c = int(n_classes) if n_classes is not None else int(y.max()) + 1
    onehot = _one_hot(y, c)
    counts = onehot.sum(axis=0)
    if np.any(counts == 0):
        raise ShapeMismatch("every class needs at least one support sample")
    return PrototypeModel((onehot.T @ x) / counts[:, None])


def prototype_scores(model: PrototypeModel, query_x) -> np.ndarray:
    """Negative squared Euclidean distance to each class mean."""
    q = np.asarray(query_x, dtype=np.float64)
    p = model.prototypes
    return 2.0 * q @ p.T - np.sum(q**2, axis=1)[:, None] - np.sum(p**2, axis=1)[None, :]


def fit_ridge(support_x, support_y, lam: float = 1.0, n_classes: int | None = None) -> RidgeModel:
    """Kernel (dual) ridge regression on one-vs-all +/-1 targets."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    x = np.asarray(support_x, dtype=np.float64)
    y = np.asarray(support_y, dtype=np.int64)
    c = int(n_classes) if n_classes is not None else int(y.max()) + 1
    targets = 2.0 * _one_hot(y, c) - 1.0
    gram = x @ x.T + lam * np.eye(len(x))
    return RidgeModel(x, cholesky_solve_factor(cholesky_factor(gram), targets))


def ridge_scores(model: RidgeModel, query_x) -> np.ndarray:
    return (np.asarray(query_x, dtype=np.float64) @ model.support_x.T) @ model.dual


def fit_learner(spec: BaseLearnerSpec, support_x, support_y, n_classes: int | None = None):
    if spec.kind == "nn":
        return fit_prototype_nn(support_x, support_y, n_classes)
    if spec.kind == "rr":
        return fit_ridge(support_x, support_y, spec.ridge_lambda, n_classes)
    return fit_lssvm(support_x, support_y, spec.lssvm, n_classes)


_MODEL_TYPES = {"nn": PrototypeModel, "rr": RidgeModel, "lssvm": LssvmModel}


def learner_score(spec: BaseLearnerSpec, model, query_x) -> np.ndarray:
    """Class scores (higher is better) for ``query_x``."""
    if not isinstance(model, _MODEL_TYPES[spec.kind]):
        raise KindMismatch(f"{type(model).__name__} was not fitted by a {spec.kind!r} learner")
    if spec.kind == "nn":
        return prototype_scores(model, query_x)
    if spec.kind == "rr":
        return ridge_scores(model, query_x)
    return lssvm_predict(model, query_x)[1]


def learner_predict(spec: BaseLearnerSpec, model, query_x) -> np.ndarray:
    return np.argmax(learner_score(spec, model, query_x), axis=1)
