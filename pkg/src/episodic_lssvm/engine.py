"""Episodic meta-training, evaluation and base-learner timing.

The trainable pipeline is ``backbone MLP -> (optional) IAM -> LS-SVM``. Every
stage exposes an explicit forward cache and a hand-written vector-Jacobian
product; ``episode_loss_and_grads`` chains them for one episode.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import BaseLearnerSpec, fit_learner, learner_score
from .episodes import Episode, FeatureBank, SplitSpec, SynthSpec, draw_episode_from_bank, sample_synthetic_episode
from .errors import LabelOutOfRange, NonFiniteLoss, ShapeMismatch
from .lssvm import LssvmConfig, fit_lssvm, lssvm_scores, lssvm_vjp
from .rng import stream
from .transduction import IamParams, PsmConfig, iam_forward, iam_vjp, psm_iterate

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ backbone


@dataclass
class BackboneParams:
    """MLP with ReLU between layers; no layers means the identity map."""

    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.weights)

    def out_dim(self, in_dim: int) -> int:
        return self.weights[-1].shape[1] if self.weights else in_dim

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"backbone.w{i}"] = w
            out[f"backbone.b{i}"] = b
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "BackboneParams":
        return BackboneParams(
            [arrays[f"backbone.w{i}"] for i in range(self.depth)],
            [arrays[f"backbone.b{i}"] for i in range(self.depth)],
        )


def backbone_init(widths: Sequence[int], rng: np.random.Generator) -> BackboneParams:
    """He-normal weights for consecutive ``widths``; zero biases."""
    widths = list(widths)
    params = BackboneParams()
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        params.weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        params.biases.append(np.zeros(fan_out))
    return params


def backbone_forward(params: BackboneParams, x):
    h = np.asarray(x, dtype=np.float64)
    cache = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if h.shape[1] != w.shape[0]:
            raise ShapeMismatch(f"layer {i} expects dim {w.shape[0]}, got {h.shape[1]}")
        pre = h @ w + b
        cache.append((h, pre))
        h = np.maximum(pre, 0.0) if i < params.depth - 1 else pre
    return h, cache


def backbone_vjp(params: BackboneParams, cache, upstream):
    """Returns ``(param_grads, d_input)``."""
    grads = {}
    g = np.asarray(upstream, dtype=np.float64)
    for i in reversed(range(params.depth)):
        h, pre = cache[i]
        if i < params.depth - 1:
            g = g * (pre > 0)
        grads[f"backbone.w{i}"] = h.T @ g
        grads[f"backbone.b{i}"] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return grads, g


# ----------------------------------------------------------- loss & optimizer


def meta_loss(scores, labels):
    """Mean cross-entropy over queries and its gradient w.r.t. ``scores``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    m, c = s.shape
    if y.shape != (m,) or (m and (y.min() < 0 or y.max() >= c)):
        raise LabelOutOfRange(f"labels must be {m} values in 0..{c - 1}")
    shifted = s - s.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(m), y]))
    grad = np.exp(shifted - logz[:, None])
    grad[np.arange(m), y] -= 1.0
    return loss, grad / m


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=5e-4, nesterov=True):
    """One SGD step with L2 weight decay folded into the gradient.

    Returns new ``(params, velocity)`` dicts; inputs are left untouched.
    """
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else g
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        g = g + weight_decay * p
        v = momentum * velocity.get(name, np.zeros_like(p)) + g
        step = g + momentum * v if nesterov else v
        new_p[name] = p - lr * step
        new_v[name] = v
    return new_p, new_v


def lr_schedule(epoch: int, lr_init: float, milestones=(20, 40, 50), factors=(0.06, 0.2, 0.2)) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = lr_init
    for mark, f in zip(milestones, factors):
        if epoch >= mark:
            lr *= f
    return lr


# ---------------------------------------------------------------- pipeline


@dataclass
class Pipeline:
    backbone: BackboneParams = field(default_factory=BackboneParams)
    iam: IamParams | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        out = self.backbone.arrays()
        if self.iam is not None:
            out.update(self.iam.arrays())
        return out

    def with_arrays(self, arrays) -> "Pipeline":
        return Pipeline(
            self.backbone.with_arrays(arrays),
            None if self.iam is None else self.iam.with_arrays(arrays),
        )


def episode_features(pipeline: Pipeline, episode: Episode, use_iam: bool = True):
    """Eval-mode features ``(support, original_support, query)``."""
    n = len(episode.support_x)
    feats, _ = backbone_forward(pipeline.backbone, np.vstack([episode.support_x, episode.query_x]))
    fs, fq = feats[:n], feats[n:]
    adj = fs
    if use_iam and pipeline.iam is not None:
        adj, _ = iam_forward(pipeline.iam, fs, episode.support_y, fq, "eval")
    return adj, fs, fq


def episode_loss_and_grads(
    pipeline: Pipeline,
    episode: Episode,
    lssvm: LssvmConfig,
    mode: str = "train",
    rng: np.random.Generator | None = None,
):
    """Forward one episode and back-propagate the query cross-entropy.

    Returns ``(loss, grads, accuracy)`` with ``grads`` keyed like ``pipeline.arrays()``.
    """
    if episode.query_y is None:
        raise ValueError("training episodes need query labels")
    n = len(episode.support_x)
    feats, bcache = backbone_forward(pipeline.backbone, np.vstack([episode.support_x, episode.query_x]))
    fs, fq = feats[:n], feats[n:]
    icache = None
    adj = fs
    if pipeline.iam is not None:
        adj, icache = iam_forward(pipeline.iam, fs, episode.support_y, fq, mode, rng)
    model = fit_lssvm(adj, episode.support_y, lssvm, n_classes=episode.way)
    scores = lssvm_scores(model, fq)
    loss, dscores = meta_loss(scores, episode.query_y)
    acc = float(np.mean(np.argmax(scores, axis=1) == episode.query_y))

    d_adj, d_fq = lssvm_vjp(model, fq, dscores)
    grads: dict[str, np.ndarray] = {}
    d_fs = d_adj
    if icache is not None:
        igrads, d_fs, d_fq_iam = iam_vjp(icache, d_adj)
        d_fq = d_fq + d_fq_iam
        grads.update(igrads)
    bgrads, _ = backbone_vjp(pipeline.backbone, bcache, np.vstack([d_fs, d_fq]))
    grads.update(bgrads)
    return loss, grads, acc


# ------------------------------------------------------------ episode source


@dataclass
class EpisodeSource:
    """Synthetic task distribution or a feature bank with class splits."""

    synth: SynthSpec | None = None
    bank: FeatureBank | None = None
    split: SplitSpec | None = None

    def __post_init__(self):
        if (self.synth is None) == (self.bank is None):
            raise ValueError("give exactly one of synth or bank")
        if self.bank is not None and self.split is None:
            raise ValueError("a bank source needs a class split")

    @property
    def dim(self) -> int:
        return self.synth.dim if self.synth is not None else self.bank.dim

    def sample(self, phase: str, way: int, shot: int, query: int, rng) -> Episode:
        if self.synth is not None:
            return sample_synthetic_episode(self.synth, way, shot, query, rng)
        return draw_episode_from_bank(self.bank, self.split.classes_for(phase), way, shot, query, rng)


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    way: int = 5
    train_shot: int = 5
    test_shot: int = 1
    query_train: int = 6
    query_test: int = 15
    epochs: int = 60
    batches_per_epoch: int = 1000
    episodes_per_batch: int = 8
    lr_init: float = 0.1
    lr_milestones: tuple[int, ...] = (20, 40, 50)
    lr_factors: tuple[float, ...] = (0.06, 0.2, 0.2)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    val_shot: int = 5
    val_episodes: int = 200
    seed: int = 0

    def __post_init__(self):
        counts = (self.way, self.train_shot, self.test_shot, self.query_train, self.query_test,
                  self.batches_per_epoch, self.episodes_per_batch, self.val_shot)
        if min(counts) < 1 or self.epochs < 0 or self.val_episodes < 0:
            raise ValueError("train counts must be positive")
        if len(self.lr_milestones) != len(self.lr_factors):
            raise ValueError("lr_milestones and lr_factors differ in length")


@dataclass
class TrainRecord:
    epoch: int
    batch: int
    loss: float
    lr: float

    def line(self) -> str:
        return f"{self.epoch} {self.batch} {self.loss:.10g} {self.lr:.10g}"


@dataclass
class TrainResult:
    pipeline: Pipeline  # best on validation
    final: Pipeline
    log: list[TrainRecord]
    val_history: list[float]
    best_epoch: int


def train(
    cfg: TrainConfig,
    source: EpisodeSource,
    pipeline: Pipeline,
    lssvm: LssvmConfig = LssvmConfig(),
    on_record: Callable[[TrainRecord], None] | None = None,
) -> TrainResult:
    params = {k: v.copy() for k, v in pipeline.arrays().items()}
    velocity: dict[str, np.ndarray] = {}
    records: list[TrainRecord] = []
    history: list[float] = []
    best = (-1.0, pipeline, -1)
    current = pipeline
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr_init, cfg.lr_milestones, cfg.lr_factors)
        for batch in range(cfg.batches_per_epoch):
            total = 0.0
            acc_grads = {k: np.zeros_like(v) for k, v in params.items()}
            for i in range(cfg.episodes_per_batch):
                rng = stream(cfg.seed, "train", epoch, batch, i)
                ep = source.sample("train", cfg.way, cfg.train_shot, cfg.query_train, rng)
                loss, grads, _ = episode_loss_and_grads(current, ep, lssvm, "train", rng)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(
                        f"non-finite loss at epoch {epoch} batch {batch} episode {i}; "
                        f"param norms: { {k: float(np.linalg.norm(v)) for k, v in params.items()} }"
                    )
                total += loss
                for k, g in grads.items():
                    acc_grads[k] += g
            scale = 1.0 / cfg.episodes_per_batch
            mean_grads = {k: g * scale for k, g in acc_grads.items()}
            params, velocity = sgd_step(
                params, mean_grads, velocity, lr, cfg.momentum, cfg.weight_decay, cfg.nesterov
            )
            current = pipeline.with_arrays(params)
            rec = TrainRecord(epoch, batch, total * scale, lr)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        if cfg.val_episodes:
            report = evaluate(
                source, current, BaseLearnerSpec("lssvm", lssvm=lssvm), way=cfg.way,
                shot=cfg.val_shot, query=cfg.query_test, episodes=cfg.val_episodes,
                seed=cfg.seed, phase="val",
            )
            history.append(report.mean_acc)
            log.info("epoch %d val acc %.4f", epoch, report.mean_acc)
            if report.mean_acc > best[0]:
                best = (report.mean_acc, current, epoch)
    if best[2] < 0:
        best = (float("nan"), current, cfg.epochs - 1)
    return TrainResult(best[1], current, records, history, best[2])


# -------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    episodes: int
    per_episode_acc: np.ndarray
    mean_acc: float
    ci95: float
    wall_clock_total_s: float
    fit_time_us: dict[str, float]

    KEYS = ("episodes", "mean_acc", "ci95")

    def to_text(self) -> str:
        """Deterministic record (no timings)."""
        return (
            f"episodes = {self.episodes}\n"
            f"mean_acc = {self.mean_acc:.10f}\n"
            f"ci95 = {self.ci95:.10f}\n"
        )

    def timing_text(self) -> str:
        lines = [f"wall_clock_total_s = {self.wall_clock_total_s:.6f}"]
        lines += [f"fit_time_us_{k} = {v:.3f}" for k, v in self.fit_time_us.items()]
        return "\n".join(lines) + "\n"

    def csv_text(self) -> str:
        rows = ["episode,accuracy"] + [f"{i},{a:.10f}" for i, a in enumerate(self.per_episode_acc)]
        return "\n".join(rows) + "\n"


def confidence95(acc) -> float:
    acc = np.asarray(acc, dtype=np.float64)
    return float(1.96 * acc.std() / np.sqrt(len(acc)))


def make_report(acc, times_s) -> EvalReport:
    acc = np.asarray(acc, dtype=np.float64)
    t_us = np.asarray(times_s) * 1e6
    stats = {
        "mean": float(t_us.mean()),
        "median": float(np.median(t_us)),
        "p95": float(np.percentile(t_us, 95)),
        "max": float(t_us.max()),
    }
    return EvalReport(len(acc), acc, float(acc.mean()), confidence95(acc), float(np.sum(times_s)), stats)


def evaluate_episode(
    pipeline: Pipeline,
    episode: Episode,
    learner: BaseLearnerSpec,
    psm: PsmConfig | None = None,
    use_iam: bool = True,
):
    """Returns ``(accuracy, fit_seconds, trace_accuracies)``."""
    support, _, query = episode_features(pipeline, episode, use_iam)
    start = time.perf_counter()
    if psm is not None and psm.iterations > 0:
        result = psm_iterate(learner, support, episode.support_y, query, psm, n_classes=episode.way)
        elapsed = time.perf_counter() - start
        trace = [float(np.mean(t == episode.query_y)) for t in result.trace]
        return trace[-1], elapsed, trace
    model = fit_learner(learner, support, episode.support_y, episode.way)
    pred = np.argmax(learner_score(learner, model, query), axis=1)
    elapsed = time.perf_counter() - start
    acc = float(np.mean(pred == episode.query_y))
    return acc, elapsed, [acc]


def evaluate(
    source: EpisodeSource,
    pipeline: Pipeline,
    learner: BaseLearnerSpec,
    way: int = 5,
    shot: int = 1,
    query: int = 15,
    episodes: int = 1000,
    seed: int = 0,
    psm: PsmConfig | None = None,
    use_iam: bool = True,
    phase: str = "test",
    threads: int = 1,
    return_traces: bool = False,
):
    if episodes < 1:
        raise ValueError("episodes must be >= 1")

    def run(i):
        ep = source.sample(phase, way, shot, query, stream(seed, phase, i))
        return evaluate_episode(pipeline, ep, learner, psm, use_iam)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(episodes)))
    else:
        results = [run(i) for i in range(episodes)]
    report = make_report([r[0] for r in results], [r[1] for r in results])
    if return_traces:
        return report, np.array([r[2] for r in results])
    return report


# --------------------------------------------------------------- benchmark


@dataclass
class TimingRow:
    learner: str
    acc: float
    ci95: float
    total_s: float
    per_episode_us: float

    def csv(self) -> str:
        return f"{self.learner},{self.acc:.6f},{self.ci95:.6f},{self.total_s:.6f},{self.per_episode_us:.3f}"


TIMING_HEADER = "learner,acc,ci95,total_s,per_episode_us"


def benchmark_timing(
    specs: Sequence[BaseLearnerSpec],
    episodes: int,
    way: int = 5,
    shot: int = 1,
    query: int = 15,
    dim: int = 64,
    seed: int = 0,
    synth: SynthSpec | None = None,
) -> list[TimingRow]:
    """Time fit+predict per learner over identical pre-sampled episodes."""
    if episodes < 100:
        raise ValueError("benchmark needs at least 100 episodes")
    synth = synth or SynthSpec(dim=dim, seed=seed)
    tasks = [
        sample_synthetic_episode(synth, way, shot, query, stream(seed, "bench", i))
        for i in range(episodes)
    ]
    rows = []
    for spec in specs:
        acc = np.empty(episodes)
        elapsed = 0.0
        for i, ep in enumerate(tasks):
            t0 = time.perf_counter()
            model = fit_learner(spec, ep.support_x, ep.support_y, way)
            pred = np.argmax(learner_score(spec, model, ep.query_x), axis=1)
            elapsed += time.perf_counter() - t0
            acc[i] = np.mean(pred == ep.query_y)
        rows.append(TimingRow(spec.kind, float(acc.mean()), confidence95(acc), elapsed, elapsed / episodes * 1e6))
    return rows
