"""Few-shot episodic classification with a differentiable multi-class LS-SVM.

The base learner is solved through its KKT system and back-propagates by
implicit differentiation; an attention module adjusts support features and
a pseudo-support loop refines prototypes from confidently labelled queries.
"""

from .baselines import BaseLearnerSpec, fit_learner, learner_predict, learner_score
from .coding import CodingMatrix, build_coding_matrix, decode_scores, encode_labels
from .config import RunConfig, parse_config
from .engine import Pipeline, TrainConfig, benchmark_timing, evaluate, train
from .episodes import Episode, FeatureBank, SynthSpec, load_feature_bank, write_feature_bank
from .lssvm import KernelSpec, LssvmConfig, fit_lssvm, lssvm_predict, lssvm_vjp
from .transduction import PsmConfig, iam_forward, iam_init_params, iam_vjp, psm_iterate

__version__ = "0.1.0"

__all__ = [
    "BaseLearnerSpec", "CodingMatrix", "Episode", "FeatureBank", "KernelSpec", "LssvmConfig",
    "Pipeline", "PsmConfig", "RunConfig", "SynthSpec", "TrainConfig", "benchmark_timing",
    "build_coding_matrix", "decode_scores", "encode_labels", "evaluate", "fit_learner",
    "fit_lssvm", "iam_forward", "iam_init_params", "iam_vjp", "learner_predict", "learner_score",
    "load_feature_bank", "lssvm_predict", "lssvm_vjp", "parse_config", "psm_iterate", "train",
    "write_feature_bank",
]
