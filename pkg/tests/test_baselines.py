import numpy as np
import pytest

from episodic_lssvm.baselines import (
    BaseLearnerSpec,
    fit_learner,
    fit_prototype_nn,
    fit_ridge,
    learner_predict,
    learner_score,
    prototype_scores,
    ridge_scores,
)
from episodic_lssvm.episodes import SynthSpec, sample_synthetic_episode
from episodic_lssvm.errors import KindMismatch
from episodic_lssvm.lssvm import lssvm_predict
from episodic_lssvm.rng import stream


def test_one_shot_prototypes_are_supports():
    x = np.random.default_rng(0).normal(size=(4, 3))
    model = fit_prototype_nn(x, [0, 1, 2, 3])
    np.testing.assert_array_equal(model.prototypes, x)
    s = prototype_scores(model, x[2:3])
    assert np.argmax(s) == 2
    assert abs(s[0, 2]) < 1e-12 and np.all(s[0, [0, 1, 3]] < 0)


def test_prototypes_are_class_means():
    x = np.arange(12.0).reshape(6, 2)
    model = fit_prototype_nn(x, [0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(model.prototypes, [[4, 5], [6, 7]])


def test_ridge_orthonormal_closed_form():
    model = fit_ridge(np.eye(2), [0, 1], lam=1.0)
    # (I + I)^{-1} T with T = [[1,-1],[-1,1]]
    np.testing.assert_allclose(model.dual, [[0.5, -0.5], [-0.5, 0.5]])
    np.testing.assert_allclose(ridge_scores(model, [[2.0, 1.0]]), [[0.5, -0.5]])


def test_ridge_dual_equals_primal():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n, d, c = rng.integers(3, 12), rng.integers(2, 9), 3
        x = rng.normal(size=(n, d))
        y = rng.integers(0, c, size=n)
        lam = float(rng.uniform(0.1, 5))
        q = rng.normal(size=(4, d))
        t = 2.0 * np.eye(c)[y] - 1.0
        primal = q @ np.linalg.solve(x.T @ x + lam * np.eye(d), x.T @ t)
        np.testing.assert_allclose(ridge_scores(fit_ridge(x, y, lam, c), q), primal, atol=1e-10)


def test_ridge_shrinkage_limit():
    x = np.random.default_rng(1).normal(size=(5, 3))
    y = [0, 1, 2, 0, 1]
    q = np.random.default_rng(2).normal(size=(4, 3))
    mags = [np.abs(ridge_scores(fit_ridge(x, y, lam), q)).max() for lam in (1e2, 1e4, 1e6)]
    assert mags[0] > mags[1] > mags[2] and mags[2] < 1e-4
    zero = ridge_scores(fit_ridge(x, y, 1e6), np.zeros((1, 3)))
    assert np.all(zero == 0) and np.argmax(zero) == 0


def test_lssvm_path_delegates():
    ep = sample_synthetic_episode(SynthSpec(), 5, 2, 4, stream(2))
    spec = BaseLearnerSpec("lssvm")
    model = fit_learner(spec, ep.support_x, ep.support_y, 5)
    np.testing.assert_array_equal(learner_score(spec, model, ep.query_x), lssvm_predict(model, ep.query_x)[1])


def test_all_learners_agree_on_separable_episode():
    ep = sample_synthetic_episode(SynthSpec(within_class_std=0.0), 5, 1, 15, stream(6))
    preds = []
    for kind in ("nn", "rr", "lssvm"):
        spec = BaseLearnerSpec(kind)
        preds.append(learner_predict(spec, fit_learner(spec, ep.support_x, ep.support_y, 5), ep.query_x))
    for p in preds:
        np.testing.assert_array_equal(p, ep.query_y)


def test_kind_mismatch():
    model = fit_prototype_nn(np.eye(2), [0, 1])
    with pytest.raises(KindMismatch):
        learner_score(BaseLearnerSpec("rr"), model, np.eye(2))
    with pytest.raises(ValueError):
        BaseLearnerSpec("svm")
