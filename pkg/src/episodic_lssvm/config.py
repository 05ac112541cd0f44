"""``key = value`` run configuration with ``[section]`` headers.

Every key belongs to exactly one section. Keys may appear before any header
or under their own section; anything else is rejected. ``#`` starts a
comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .baselines import BaseLearnerSpec
from .episodes import SynthSpec
from .errors import ConfigError, UnknownKey
from .lssvm import KernelSpec, LssvmConfig
from .transduction import PsmConfig


def _sec(section: str, default):
    return dataclasses.field(default=default, metadata={"section": section})


@dataclass
class RunConfig:
    # run
    seed: int = _sec("run", 0)
    threads: int = _sec("run", 1)
    out_dir: str = _sec("run", ".")
    # data
    bank: str = _sec("data", "")
    split: str = _sec("data", "64,16,20")
    dim: int = _sec("data", 16)
    class_center_scale: float = _sec("data", 1.0)
    within_class_std: float = _sec("data", 0.35)
    support_noise_factor: float = _sec("data", 1.0)
    # learner
    learner: str = _sec("learner", "lssvm")
    gamma: float = _sec("learner", 0.1)
    kernel: str = _sec("learner", "linear")
    rbf_sigma: float = _sec("learner", 1.0)
    coding: str = _sec("learner", "ova")
    decode: str = _sec("learner", "linear")
    bias_stationarity_scale: float = _sec("learner", 1.0)
    ridge_lambda: float = _sec("learner", 1.0)
    # iam
    iam: bool = _sec("iam", False)
    iam_r: str = _sec("iam", "auto")
    iam_dropout: float = _sec("iam", 0.1)
    iam_dk: int = _sec("iam", 0)
    iam_dv: int = _sec("iam", 0)
    # psm
    psm_iters: int = _sec("psm", 10)
    psm_accumulate: bool = _sec("psm", True)
    # episode shape at meta-test
    way: int = _sec("episode", 5)
    shot: int = _sec("episode", 1)
    query: int = _sec("episode", 15)
    # train
    backbone: str = _sec("train", "")
    train_shot: int = _sec("train", 5)
    query_train: int = _sec("train", 6)
    epochs: int = _sec("train", 60)
    batches_per_epoch: int = _sec("train", 1000)
    episodes_per_batch: int = _sec("train", 8)
    lr_init: float = _sec("train", 0.1)
    lr_milestones: str = _sec("train", "20,40,50")
    lr_factors: str = _sec("train", "0.06,0.2,0.2")
    momentum: float = _sec("train", 0.9)
    weight_decay: float = _sec("train", 5e-4)
    val_shot: int = _sec("train", 5)
    val_episodes: int = _sec("train", 200)
    # eval
    episodes: int = _sec("eval", 1000)
    # bench
    bench_episodes: int = _sec("bench", 10000)
    learners: str = _sec("bench", "nn,rr,lssvm")
    bench_dim: int = _sec("bench", 64)

    # ------------------------------------------------------------ builders

    def lssvm_config(self) -> LssvmConfig:
        return LssvmConfig(
            gamma=self.gamma,
            kernel=KernelSpec(self.kernel, self.rbf_sigma),
            coding=self.coding,
            decode_mode=self.decode,
            bias_stationarity_scale=self.bias_stationarity_scale,
            coding_seed=self.seed,
        )

    def learner_spec(self, kind: str | None = None) -> BaseLearnerSpec:
        return BaseLearnerSpec(kind or self.learner, self.ridge_lambda, self.lssvm_config())

    def synth_spec(self, dim: int | None = None) -> SynthSpec:
        return SynthSpec(
            dim=self.dim if dim is None else dim,
            class_center_scale=self.class_center_scale,
            within_class_std=self.within_class_std,
            support_noise_factor=self.support_noise_factor,
            seed=self.seed,
        )

    def psm_config(self) -> PsmConfig:
        return PsmConfig(self.psm_iters, self.psm_accumulate)

    def backbone_widths(self) -> list[int]:
        return int_list(self.backbone)

    def iam_ratio(self, dim: int) -> int:
        if self.iam_r == "auto":
            return 8 if dim <= 64 else 16
        return int(self.iam_r)

    def to_text(self) -> str:
        lines, current = [], None
        for f in fields(self):
            sec = f.metadata["section"]
            if sec != current:
                if current is not None:
                    lines.append("")
                lines.append(f"[{sec}]")
                current = sec
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}
SECTIONS = sorted({f.metadata["section"] for f in fields(RunConfig)})


def int_list(text: str) -> list[int]:
    return [int(p) for p in text.replace(" ", "").split(",") if p]


def float_list(text: str) -> list[float]:
    return [float(p) for p in text.replace(" ", "").split(",") if p]


def _format(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    return str(value)


def _convert(name: str, raw: str):
    f = _FIELDS[name]
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return raw


_CHOICES = {
    "learner": ("nn", "rr", "lssvm"),
    "kernel": ("linear", "rbf"),
    "coding": ("ova", "ovo", "random"),
    "decode": ("linear", "hamming"),
}


def validate(cfg: RunConfig) -> RunConfig:
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            raise ConfigError(f"{key} must be one of {allowed}, got {getattr(cfg, key)!r}")
    try:
        split = float_list(cfg.split)
        widths = cfg.backbone_widths()
        milestones, factors = int_list(cfg.lr_milestones), float_list(cfg.lr_factors)
        if cfg.iam_r != "auto" and int(cfg.iam_r) < 1:
            raise ValueError("iam_r")
        for name in ("learners",):
            for item in getattr(cfg, name).split(","):
                if item.strip() not in _CHOICES["learner"]:
                    raise ValueError(f"learner {item!r}")
    except ValueError as exc:
        raise ConfigError(f"malformed list value: {exc}") from None
    if len(split) != 3:
        raise ConfigError("split needs three proportions")
    if len(milestones) != len(factors):
        raise ConfigError("lr_milestones and lr_factors differ in length")
    if widths and widths[0] != cfg.dim and not cfg.bank:
        raise ConfigError(f"backbone input width {widths[0]} != dim {cfg.dim}")
    if cfg.gamma <= 0 or cfg.ridge_lambda <= 0 or cfg.rbf_sigma <= 0:
        raise ConfigError("gamma, ridge_lambda and rbf_sigma must be > 0")
    if not 0 <= cfg.iam_dropout < 1:
        raise ConfigError("iam_dropout must lie in [0, 1)")
    positive = ("way", "shot", "query", "train_shot", "query_train", "batches_per_epoch",
                "episodes_per_batch", "episodes", "bench_episodes", "threads", "dim", "val_shot")
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.way < 2:
        raise ConfigError("way must be >= 2")
    if cfg.psm_iters < 0 or cfg.epochs < 0 or cfg.val_episodes < 0:
        raise ConfigError("psm_iters, epochs and val_episodes must be >= 0")
    return cfg


def parse_config_text(text: str, overrides: dict[str, str] | None = None, origin: str = "<config>") -> RunConfig:
    values: dict[str, object] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{origin}:{lineno}: malformed section header")
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{origin}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if key not in _FIELDS:
            raise UnknownKey(key)
        home = _FIELDS[key].metadata["section"]
        if section is not None and section != home:
            raise ConfigError(f"{origin}:{lineno}: key {key!r} belongs in [{home}], not [{section}]")
        values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in _FIELDS:
            raise UnknownKey(key)
        values[key] = _convert(key, str(raw))
    return validate(RunConfig(**values))


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read ``path`` (or nothing) and apply ``overrides``; unknown keys raise."""
    text = ""
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, overrides, str(path or "<defaults>"))
