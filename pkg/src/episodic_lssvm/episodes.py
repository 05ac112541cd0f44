"""Episodes, synthetic task sampling, feature banks and class splits."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    InconsistentDim,
    InsufficientClasses,
    InsufficientSamples,
    NonFiniteFeature,
    TruncatedFile,
)

FBK_MAGIC = b"FBK1"
FBK_VERSION = 1


@dataclass
class Episode:
    """One N-way K-shot task with episode-local labels ``0..way-1``."""

    way: int
    shot: int
    query_per_class: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray | None = None
    centers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.support_x = np.asarray(self.support_x, dtype=np.float64)
        self.query_x = np.asarray(self.query_x, dtype=np.float64)
        self.support_y = np.asarray(self.support_y, dtype=np.int64)
        if self.support_x.ndim != 2 or self.query_x.ndim != 2:
            raise ValueError("support_x and query_x must be 2-D")
        if self.support_x.shape[1] != self.query_x.shape[1]:
            raise ValueError("support and query feature dims differ")
        counts = np.bincount(self.support_y, minlength=self.way)
        if len(counts) != self.way or np.any(counts != self.shot):
            raise ValueError(f"support must hold exactly {self.shot} samples per class")
        if self.query_y is not None:
            self.query_y = np.asarray(self.query_y, dtype=np.int64)
            qc = np.bincount(self.query_y, minlength=self.way)
            if len(qc) != self.way or np.any(qc != self.query_per_class):
                raise ValueError(
                    f"query must hold exactly {self.query_per_class} samples per class"
                )
        if not (np.all(np.isfinite(self.support_x)) and np.all(np.isfinite(self.query_x))):
            raise ValueError("episode features must be finite")

    @property
    def dim(self) -> int:
        return self.support_x.shape[1]


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian-mixture task distribution.

    Class centers are drawn from ``Normal(0, class_center_scale^2 I)``; query
    points use ``within_class_std`` and support points are additionally
    inflated by ``support_noise_factor``.
    """

    dim: int = 16
    class_center_scale: float = 1.0
    within_class_std: float = 0.35
    support_noise_factor: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.class_center_scale <= 0:
            raise ValueError("class_center_scale must be > 0")
        # std = 0 is accepted: it is the noiseless limit used for sanity checks
        if self.within_class_std < 0:
            raise ValueError("within_class_std must be >= 0")
        if self.support_noise_factor < 1:
            raise ValueError("support_noise_factor must be >= 1")


def sample_synthetic_episode(
    spec: SynthSpec, way: int, shot: int, query_per_class: int, rng: np.random.Generator
) -> Episode:
    if way < 2 or shot < 1 or query_per_class < 1:
        raise ValueError("need way >= 2, shot >= 1, query_per_class >= 1")
    centers = rng.normal(0.0, spec.class_center_scale, size=(way, spec.dim))
    s_std = spec.within_class_std * spec.support_noise_factor
    support = np.repeat(centers, shot, axis=0) + rng.normal(0.0, 1.0, (way * shot, spec.dim)) * s_std
    query = (
        np.repeat(centers, query_per_class, axis=0)
        + rng.normal(0.0, 1.0, (way * query_per_class, spec.dim)) * spec.within_class_std
    )
    return Episode(
        way=way,
        shot=shot,
        query_per_class=query_per_class,
        support_x=support,
        support_y=np.repeat(np.arange(way), shot),
        query_x=query,
        query_y=np.repeat(np.arange(way), query_per_class),
        centers=centers,
    )


class FeatureBank:
    """Immutable labelled feature store, kept in file order.

    Features are float32 values held as float64 so that binary round trips
    are exact.
    """

    def __init__(self, labels, features):
        labels = np.asarray(labels, dtype=np.int64)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] < 1:
            raise InconsistentDim(f"features must be n x dim with dim >= 1, got {features.shape}")
        if labels.shape != (features.shape[0],):
            raise InconsistentDim("labels and features disagree in length")
        if features.shape[0] == 0:
            raise BadHeader("feature bank holds no samples")
        if labels.min() < 0:
            raise BadHeader("class ids must be nonnegative")
        if not np.all(np.isfinite(features)):
            raise NonFiniteFeature("feature bank has non-finite entries")
        self.labels = labels
        self.features = features
        self.labels.setflags(write=False)
        self.features.setflags(write=False)
        self._index = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> list[int]:
        return sorted(self._index)

    def __len__(self) -> int:
        return len(self.labels)

    def samples(self, class_id: int) -> np.ndarray:
        return self.features[self._index[class_id]]

    def indices(self, class_id: int) -> np.ndarray:
        return self._index[class_id]

    def __eq__(self, other):
        return (
            isinstance(other, FeatureBank)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


def generate_bank(spec: SynthSpec, classes: int, per_class: int, rng: np.random.Generator) -> FeatureBank:
    """Sample a class-major Gaussian-mixture bank (features rounded to float32)."""
    if classes < 1 or per_class < 1:
        raise ValueError("classes and per_class must be >= 1")
    centers = rng.normal(0.0, spec.class_center_scale, size=(classes, spec.dim))
    x = np.repeat(centers, per_class, axis=0)
    x = x + rng.normal(0.0, 1.0, x.shape) * spec.within_class_std
    labels = np.repeat(np.arange(classes), per_class)
    return FeatureBank(labels, x.astype(np.float32).astype(np.float64))


@dataclass(frozen=True)
class SplitSpec:
    train_classes: tuple[int, ...]
    val_classes: tuple[int, ...]
    test_classes: tuple[int, ...]

    def __post_init__(self):
        sets = [set(self.train_classes), set(self.val_classes), set(self.test_classes)]
        if (sets[0] & sets[1]) or (sets[0] & sets[2]) or (sets[1] & sets[2]):
            raise ValueError("class splits must be pairwise disjoint")

    def classes_for(self, phase: str) -> tuple[int, ...]:
        chosen = {"train": self.train_classes, "val": self.val_classes, "test": self.test_classes}[phase]
        if not chosen:
            raise InsufficientClasses(f"{phase} split is empty")
        return chosen


def split_classes(classes: Sequence[int], proportions: Sequence[float] = (64, 16, 20)) -> SplitSpec:
    """Deterministically partition sorted class ids by proportion."""
    ids = sorted(int(c) for c in classes)
    p = np.asarray(proportions, dtype=np.float64)
    if p.shape != (3,) or np.any(p < 0) or p.sum() <= 0:
        raise ValueError("split proportions must be three nonnegative numbers")
    cuts = np.round(np.cumsum(p) / p.sum() * len(ids)).astype(int)
    return SplitSpec(tuple(ids[: cuts[0]]), tuple(ids[cuts[0] : cuts[1]]), tuple(ids[cuts[1] :]))


def draw_episode_from_bank(
    bank: FeatureBank,
    split: Sequence[int],
    way: int,
    shot: int,
    query_per_class: int,
    rng: np.random.Generator,
    return_indices: bool = False,
):
    split = list(split)
    if len(split) < way:
        raise InsufficientClasses(f"split has {len(split)} classes, need {way}")
    chosen = rng.choice(len(split), size=way, replace=False)
    need = shot + query_per_class
    s_idx, q_idx = [], []
    for c in chosen:
        idx = bank.indices(split[c])
        if len(idx) < need:
            raise InsufficientSamples(f"class {split[c]} has {len(idx)} samples, need {need}")
        picked = idx[rng.permutation(len(idx))[:need]]
        s_idx.append(picked[:shot])
        q_idx.append(picked[shot:])
    s_idx = np.concatenate(s_idx)
    q_idx = np.concatenate(q_idx)
    ep = Episode(
        way=way,
        shot=shot,
        query_per_class=query_per_class,
        support_x=bank.features[s_idx],
        support_y=np.repeat(np.arange(way), shot),
        query_x=bank.features[q_idx],
        query_y=np.repeat(np.arange(way), query_per_class),
    )
    return (ep, s_idx, q_idx) if return_indices else ep


# ---------------------------------------------------------------- file I/O

_HEADER = struct.Struct("<4sIII")


def write_feature_bank(bank: FeatureBank, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _write_csv(bank, path)
        return
    n, dim = bank.features.shape
    record = np.dtype([("label", "<u4"), ("x", "<f4", (dim,))])
    rows = np.empty(n, dtype=record)
    rows["label"] = bank.labels
    rows["x"] = bank.features
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FBK_MAGIC, FBK_VERSION, dim, n))
        fh.write(rows.tobytes())


def load_feature_bank(path) -> FeatureBank:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != FBK_MAGIC:
        raise BadMagic(f"{path}: not an FBK1 file")
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, version, dim, n = _HEADER.unpack_from(raw)
    if version != FBK_VERSION:
        raise BadHeader(f"{path}: unsupported version {version}")
    if dim == 0:
        raise InconsistentDim(f"{path}: dim is zero")
    if n == 0:
        raise BadHeader(f"{path}: bank holds no samples")
    record = np.dtype([("label", "<u4"), ("x", "<f4", (dim,))])
    expected = _HEADER.size + n * record.itemsize
    if len(raw) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise BadHeader(f"{path}: {len(raw) - expected} trailing bytes")
    rows = np.frombuffer(raw, dtype=record, count=n, offset=_HEADER.size)
    x = rows["x"].astype(np.float64).reshape(n, dim)
    if not np.all(np.isfinite(x)):
        raise NonFiniteFeature(f"{path}: non-finite feature value")
    return FeatureBank(rows["label"].astype(np.int64), x)


def _write_csv(bank: FeatureBank, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(bank.dim)])
        for lab, row in zip(bank.labels, bank.features.astype(np.float32)):
            w.writerow([int(lab)] + [f"{v:.9g}" for v in row])


def _load_csv(path: Path) -> FeatureBank:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label" or len(header) < 2:
            raise BadHeader(f"{path}: header must be label,f0,...")
        dim = len(header) - 1
        if [h.strip() for h in header[1:]] != [f"f{j}" for j in range(dim)]:
            raise BadHeader(f"{path}: feature columns must be f0..f{dim - 1}")
        labels, feats = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise InconsistentDim(f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}")
            try:
                lab = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise BadHeader(f"{path}:{lineno}: {exc}") from None
            if lab < 0:
                raise BadHeader(f"{path}:{lineno}: negative label")
            if not all(np.isfinite(vals)):
                raise NonFiniteFeature(f"{path}:{lineno}: non-finite feature")
            labels.append(lab)
            feats.append(vals)
    if not labels:
        raise BadHeader(f"{path}: bank holds no samples")
    x = np.asarray(feats, dtype=np.float32).astype(np.float64)
    return FeatureBank(np.asarray(labels), x)
