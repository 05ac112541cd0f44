"""Transductive support adjustment.

``iam_forward`` moves support features using attention over the query set:
support rows act as attention queries, query rows as keys and values, the
attended rows are averaged per support class, passed through a bottleneck,
and added back as a residual before layer normalization.

``psm_iterate`` repeatedly appends class prototypes of pseudo-labelled query
features to the support set and refits the learner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import BaseLearnerSpec, fit_learner, learner_score
from .errors import EmptyQuery, ShapeMismatch, StaleCache
from .numerics import layer_norm_forward, layer_norm_vjp, softmax_rows, softmax_rows_vjp

LN_EPS = 1e-5


@dataclass
class BottleneckMap:
    """``relu(x @ w1) @ w2``."""

    w1: np.ndarray
    w2: np.ndarray

    @property
    def r_hidden(self) -> int:
        return self.w1.shape[1]

    def forward(self, x):
        h = x @ self.w1
        r = np.maximum(h, 0.0)
        return r @ self.w2, (x, h, r)

    def vjp(self, cache, upstream):
        x, h, r = cache
        dw2 = r.T @ upstream
        dh = (upstream @ self.w2.T) * (h > 0)
        return dh @ self.w1.T, x.T @ dh, dw2


def hidden_width(d_in: int, r: int) -> int:
    return max(1, d_in // r)


@dataclass
class IamParams:
    map_q: BottleneckMap
    map_k: BottleneckMap
    map_v: BottleneckMap
    map_h: BottleneckMap
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    r: int = 8
    dropout_rate: float = 0.1

    @property
    def d(self) -> int:
        return self.ln_gain.shape[0]

    @property
    def d_k(self) -> int:
        return self.map_q.w2.shape[1]

    @property
    def d_v(self) -> int:
        return self.map_v.w2.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("q", "k", "v", "h"):
            m = getattr(self, f"map_{name}")
            out[f"iam.{name}.w1"] = m.w1
            out[f"iam.{name}.w2"] = m.w2
        out["iam.ln_gain"] = self.ln_gain
        out["iam.ln_bias"] = self.ln_bias
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "IamParams":
        maps = {
            f"map_{n}": BottleneckMap(arrays[f"iam.{n}.w1"], arrays[f"iam.{n}.w2"])
            for n in ("q", "k", "v", "h")
        }
        return IamParams(
            **maps,
            ln_gain=arrays["iam.ln_gain"],
            ln_bias=arrays["iam.ln_bias"],
            r=self.r,
            dropout_rate=self.dropout_rate,
        )


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _bottleneck(rng, d_in, d_out, r, zero_out=False):
    hid = hidden_width(d_in, r)
    w1 = _glorot(rng, d_in, hid)
    w2 = np.zeros((hid, d_out)) if zero_out else _glorot(rng, hid, d_out)
    return BottleneckMap(w1, w2)


def iam_init_params(
    d: int,
    d_k: int | None = None,
    d_v: int | None = None,
    r: int = 8,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.1,
) -> IamParams:
    """Glorot-uniform bottlenecks; the output map's second layer starts at zero."""
    d_k = d if d_k is None else d_k
    d_v = d if d_v is None else d_v
    if min(d, d_k, d_v) < 1 or r < 1:
        raise ValueError("dimensions and reduction ratio must be >= 1")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must lie in [0, 1)")
    rng = np.random.default_rng(0) if rng is None else rng
    return IamParams(
        map_q=_bottleneck(rng, d, d_k, r),
        map_k=_bottleneck(rng, d, d_k, r),
        map_v=_bottleneck(rng, d, d_v, r),
        map_h=_bottleneck(rng, d_v, d, r, zero_out=True),
        ln_gain=np.ones(d),
        ln_bias=np.zeros(d),
        r=r,
        dropout_rate=dropout_rate,
    )


def class_mean_operator(labels) -> np.ndarray:
    """Symmetric ``n x n`` matrix replacing each row by its class mean."""
    labels = np.asarray(labels)
    same = (labels[:, None] == labels[None, :]).astype(np.float64)
    return same / same.sum(axis=1, keepdims=True)


@dataclass
class IamCache:
    params: IamParams
    support_x: np.ndarray
    query_x: np.ndarray
    q_cache: tuple
    k_cache: tuple
    v_cache: tuple
    h_cache: tuple
    keys: np.ndarray
    queries: np.ndarray
    values: np.ndarray
    attn: np.ndarray
    mean_op: np.ndarray
    mask: np.ndarray
    ln_cache: tuple
    consumed: bool = field(default=False)


def iam_forward(
    params: IamParams,
    support_x,
    support_y,
    query_x,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
):
    """Returns ``(adjusted_support, cache)``."""
    s = np.asarray(support_x, dtype=np.float64)
    qx = np.asarray(query_x, dtype=np.float64)
    if s.ndim != 2 or qx.ndim != 2 or s.shape[1] != params.d or qx.shape[1] != params.d:
        raise ShapeMismatch(f"IAM expects features of dim {params.d}")
    if len(support_y) != len(s):
        raise ShapeMismatch("support_y length differs from support_x rows")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    queries, q_cache = params.map_q.forward(s)
    keys, k_cache = params.map_k.forward(qx)
    values, v_cache = params.map_v.forward(qx)
    attn = softmax_rows(queries @ keys.T / np.sqrt(params.d_k))
    mean_op = class_mean_operator(support_y)
    attended = mean_op @ (attn @ values)
    offset, h_cache = params.map_h.forward(attended)

    rate = params.dropout_rate
    if mode == "train" and rate > 0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        mask = (rng.random(offset.shape) >= rate) / (1.0 - rate)
    else:
        mask = np.ones_like(offset)
    out, ln_cache = layer_norm_forward(s + offset * mask, params.ln_gain, params.ln_bias, LN_EPS)
    cache = IamCache(
        params, s, qx, q_cache, k_cache, v_cache, h_cache,
        keys, queries, values, attn, mean_op, mask, ln_cache,
    )
    return out, cache


def iam_vjp(cache: IamCache, upstream):
    """Reverse pass. Returns ``(param_grads, d_support, d_query)``.

    A cache backs exactly one backward pass.
    """
    if cache.consumed:
        raise StaleCache("IAM cache was already used for a backward pass")
    p = cache.params
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != cache.support_x.shape:
        raise ShapeMismatch(f"upstream shape {up.shape} != {cache.support_x.shape}")
    cache.consumed = True

    dz, dgain, dbias = layer_norm_vjp(cache.ln_cache, up)
    d_support = dz.copy()
    d_attended, dh_w1, dh_w2 = p.map_h.vjp(cache.h_cache, dz * cache.mask)
    d_av = cache.mean_op.T @ d_attended
    d_attn = d_av @ cache.values.T
    d_values = cache.attn.T @ d_av
    d_logits = softmax_rows_vjp(cache.attn, d_attn) / np.sqrt(p.d_k)
    d_queries = d_logits @ cache.keys
    d_keys = d_logits.T @ cache.queries

    dxq, dq_w1, dq_w2 = p.map_q.vjp(cache.q_cache, d_queries)
    dxk, dk_w1, dk_w2 = p.map_k.vjp(cache.k_cache, d_keys)
    dxv, dv_w1, dv_w2 = p.map_v.vjp(cache.v_cache, d_values)
    d_support += dxq
    grads = {
        "iam.q.w1": dq_w1, "iam.q.w2": dq_w2,
        "iam.k.w1": dk_w1, "iam.k.w2": dk_w2,
        "iam.v.w1": dv_w1, "iam.v.w2": dv_w2,
        "iam.h.w1": dh_w1, "iam.h.w2": dh_w2,
        "iam.ln_gain": dgain, "iam.ln_bias": dbias,
    }
    return grads, d_support, dxk + dxv


# ------------------------------------------------------------------- PSM


@dataclass(frozen=True)
class PsmConfig:
    iterations: int = 10
    accumulate: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class PsmResult:
    labels: np.ndarray
    scores: np.ndarray
    trace: list[np.ndarray]  # trace[t]: predictions after t augmentations
    support_sizes: list[int]


def query_prototypes(query_x: np.ndarray, pseudo: np.ndarray, n_classes: int):
    """Means of pseudo-labelled queries; classes with no members are skipped."""
    protos, labels = [], []
    for c in range(n_classes):
        members = pseudo == c
        if members.any():
            protos.append(query_x[members].mean(axis=0))
            labels.append(c)
    return np.asarray(protos).reshape(-1, query_x.shape[1]), np.asarray(labels, dtype=np.int64)


def psm_iterate(
    learner: BaseLearnerSpec,
    support_x,
    support_y,
    query_x,
    psm: PsmConfig = PsmConfig(),
    n_classes: int | None = None,
) -> PsmResult:
    sx = np.asarray(support_x, dtype=np.float64)
    sy = np.asarray(support_y, dtype=np.int64)
    qx = np.asarray(query_x, dtype=np.float64)
    if qx.ndim != 2 or len(qx) == 0:
        raise EmptyQuery("PSM needs at least one query sample")
    c = int(n_classes) if n_classes is not None else int(sy.max()) + 1

    model = fit_learner(learner, sx, sy, c)
    scores = learner_score(learner, model, qx)
    labels = np.argmax(scores, axis=1)
    trace = [labels]
    sizes = [len(sx)]
    extra_x = np.empty((0, sx.shape[1]))
    extra_y = np.empty(0, dtype=np.int64)
    for _ in range(psm.iterations):
        px, py = query_prototypes(qx, labels, c)
        if psm.accumulate:
            extra_x = np.vstack([extra_x, px])
            extra_y = np.concatenate([extra_y, py])
        else:
            extra_x, extra_y = px, py
        cur_x = np.vstack([sx, extra_x])
        cur_y = np.concatenate([sy, extra_y])
        model = fit_learner(learner, cur_x, cur_y, c)
        scores = learner_score(learner, model, qx)
        labels = np.argmax(scores, axis=1)
        trace.append(labels)
        sizes.append(len(cur_x))
    return PsmResult(labels, scores, trace, sizes)
