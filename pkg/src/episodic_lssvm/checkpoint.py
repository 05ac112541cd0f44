"""Engine-private checkpoint: shape-headed float64 arrays plus the run config.

Layout (little-endian)::

    b"ELCK" | u32 version | u32 config_len | config utf-8
    | u32 n_arrays | n_arrays x (u16 name_len | name | u32 ndim | ndim x u32 | f64 data)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config_text
from .engine import BackboneParams, Pipeline
from .errors import BadHeader, BadMagic, TruncatedFile
from .transduction import BottleneckMap, IamParams

MAGIC = b"ELCK"
VERSION = 1


def save_checkpoint(path, pipeline: Pipeline, cfg: RunConfig) -> None:
    cfg_bytes = cfg.to_text().encode("utf-8")
    arrays = pipeline.arrays()
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg_bytes)), cfg_bytes, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(a.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile("checkpoint truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[Pipeline, RunConfig]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint")
    r = _Reader(raw)
    r.take(4)
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise BadHeader(f"{path}: unsupported checkpoint version {version}")
    cfg = parse_config_text(r.take(cfg_len).decode("utf-8"), origin=str(path))
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(raw):
        raise BadHeader(f"{path}: trailing bytes")

    depth = sum(1 for k in arrays if k.startswith("backbone.w"))
    backbone = BackboneParams(
        [arrays[f"backbone.w{i}"] for i in range(depth)],
        [arrays[f"backbone.b{i}"] for i in range(depth)],
    )
    iam = None
    if "iam.q.w1" in arrays:
        maps = {
            f"map_{n}": BottleneckMap(arrays[f"iam.{n}.w1"], arrays[f"iam.{n}.w2"])
            for n in ("q", "k", "v", "h")
        }
        d = arrays["iam.ln_gain"].shape[0]
        iam = IamParams(
            **maps,
            ln_gain=arrays["iam.ln_gain"],
            ln_bias=arrays["iam.ln_bias"],
            r=cfg.iam_ratio(d),
            dropout_rate=cfg.iam_dropout,
        )
    return Pipeline(backbone, iam), cfg
