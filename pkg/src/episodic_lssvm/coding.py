"""Coding matrices reducing a C-class problem to L binary subproblems."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch

SCHEMES = ("ova", "ovo", "random")
DECODE_MODES = ("linear", "hamming")
RANDOM_COLUMNS_PER_BIT = 10


@dataclass(frozen=True)
class CodingMatrix:
    scheme: str
    entries: np.ndarray  # C x L over {-1, 0, +1}

    @property
    def c(self) -> int:
        return self.entries.shape[0]

    @property
    def l(self) -> int:
        return self.entries.shape[1]


def validate_coding(m: np.ndarray) -> list[str]:
    """Return a list of invariant violations (empty when valid)."""
    problems = []
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 1:
        return [f"bad shape {m.shape}"]
    if not np.all(np.isin(m, (-1, 0, 1))):
        problems.append("entries outside {-1,0,+1}")
    if np.any(np.all(m == 0, axis=0)):
        problems.append("all-zero column")
    if np.any(~np.any(m > 0, axis=0) | ~np.any(m < 0, axis=0)):
        problems.append("column without both signs")
    if len({tuple(col) for col in m.T}) != m.shape[1]:
        problems.append("duplicate columns")
    if len({tuple(row) for row in m}) != m.shape[0]:
        problems.append("duplicate rows")
    return problems


def random_code_length(c: int) -> int:
    # capped by the number of distinct two-signed dense columns
    return min(math.ceil(RANDOM_COLUMNS_PER_BIT * math.log2(c)), 2**c - 2)


def build_coding_matrix(scheme: str, c: int, rng: np.random.Generator | None = None) -> CodingMatrix:
    if c < 2:
        raise ValueError("need at least two classes")
    if scheme == "random":
        if rng is None:
            raise ValueError("random coding requires an rng")
        return CodingMatrix(scheme, _random_dense(c, rng))
    return _fixed_coding(scheme, c)


@lru_cache(maxsize=None)
def _fixed_coding(scheme: str, c: int) -> CodingMatrix:
    if scheme == "ova":
        m = 2 * np.eye(c, dtype=np.int64) - 1
    elif scheme == "ovo":
        pairs = list(combinations(range(c), 2))
        m = np.zeros((c, len(pairs)), dtype=np.int64)
        for l, (i, j) in enumerate(pairs):
            m[i, l], m[j, l] = 1, -1
    else:
        raise ValueError(f"unknown coding scheme {scheme!r}")
    m.setflags(write=False)
    return CodingMatrix(scheme, m)


def _random_dense(c: int, rng: np.random.Generator) -> np.ndarray:
    length = random_code_length(c)
    while True:
        cols: list[tuple[int, ...]] = []
        seen = set()
        while len(cols) < length:
            col = tuple(int(v) for v in rng.choice((-1, 1), size=c))
            if len(set(col)) < 2 or col in seen:
                continue
            seen.add(col)
            cols.append(col)
        m = np.array(cols, dtype=np.int64).T
        if len({tuple(r) for r in m}) == c:
            return m


def encode_labels(m: CodingMatrix, labels) -> np.ndarray:
    """Per-subproblem targets ``(n x L)``: row i is the code of ``labels[i]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= m.c):
        raise LabelOutOfRange(f"labels must lie in 0..{m.c - 1}")
    return m.entries[labels]


def _sgn(x):
    return np.where(x >= 0, 1, -1)


def decode_scores(m: CodingMatrix, c_values, mode: str = "linear"):
    """Map decision values ``(n x L)`` to ``(labels, class_scores)``.

    ``linear`` scores are ``c_values @ M.T``; ``hamming`` scores are the negated
    code distances with ``sgn(0) = +1``. Ties go to the lowest class index.
    """
    cv = np.asarray(c_values, dtype=np.float64)
    if cv.ndim != 2 or cv.shape[1] != m.l:
        raise ShapeMismatch(f"c_values must be n x {m.l}, got {cv.shape}")
    if mode == "linear":
        scores = cv @ m.entries.T
    elif mode == "hamming":
        agree = _sgn(m.entries[None, :, :] * _sgn(cv)[:, None, :])
        scores = -np.sum((1 - agree) // 2, axis=2).astype(np.float64)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    return np.argmax(scores, axis=1), scores
