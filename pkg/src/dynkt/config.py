"""Experiment configuration: dataclasses, validation, and the key = value file format.

A run config is an INI-style file with ``[model]``, ``[train]``, ``[data]``,
``[embedding]`` and ``[run]`` sections. Unknown keys are rejected so typos
surface immediately.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError

BIGRU = "bigru"
TDNN = "tdnn"
VARIANTS = (BIGRU, TDNN)

_VARIANT_DEFAULTS = {
    BIGRU: dict(conv_filters=100, conv_kernel=3, dense_units=(50, 25)),
    TDNN: dict(conv_filters=50, conv_kernel=5, dense_units=(20, 15, 10, 5)),
}
_TRAIN_DEFAULTS = {
    BIGRU: dict(batch_size=32, optimizer="adam", schedule_enabled=True),
    TDNN: dict(batch_size=50, optimizer="adamax", schedule_enabled=False),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = BIGRU
    window: int = 50
    embed_dim: int = 100
    skill_vocab_size: int = 1
    response_vocab_size: int = 3
    conv_filters: int = 100
    conv_kernel: int = 3
    gru_units: int = 64
    dense_units: tuple[int, ...] = (50, 25)
    spatial_dropout_rate: float = 0.2
    gaussian_dropout_rate: float = 0.2
    seed: int = 0

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"model.variant: expected one of {VARIANTS}, got {variant!r}")
        return cls(variant=variant, **{**_VARIANT_DEFAULTS[variant], **overrides})

    @property
    def response_dim(self) -> int:
        return self.embed_dim

    @property
    def state_dim(self) -> int:
        if self.variant == BIGRU:
            return 2 * self.gru_units
        return self.window * 2 * self.conv_filters

    def validate(self) -> "ModelConfig":
        _check(self.variant in VARIANTS, "model.variant", f"must be one of {VARIANTS}")
        _check(self.window >= 2, "model.window", "must be >= 2")
        _check(self.embed_dim >= 1, "model.embed_dim", "must be >= 1")
        _check(self.skill_vocab_size >= 1, "model.skill_vocab_size", "must be >= 1")
        _check(self.response_vocab_size == 3, "model.response_vocab_size", "must be 3 (pad/wrong/correct)")
        _check(self.conv_filters >= 1, "model.conv_filters", "must be >= 1")
        _check(self.conv_kernel >= 1 and self.conv_kernel % 2 == 1, "model.conv_kernel", "must be odd")
        _check(self.gru_units >= 1, "model.gru_units", "must be >= 1")
        _check(len(self.dense_units) >= 1 and all(u >= 1 for u in self.dense_units),
               "model.dense_units", "must be a non-empty list of positive widths")
        if self.variant == TDNN:
            _check(all(a > b for a, b in zip(self.dense_units, self.dense_units[1:])),
                   "model.dense_units", "must be strictly decreasing for tdnn")
        _check(0.0 <= self.spatial_dropout_rate < 1.0, "model.spatial_dropout_rate", "must be in [0, 1)")
        _check(0.0 <= self.gaussian_dropout_rate < 1.0, "model.gaussian_dropout_rate", "must be in [0, 1)")
        return self


@dataclass(frozen=True)
class TrainConfig:
    r_init: float = 0.001
    schedule_enabled: bool = True
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "TrainConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"model.variant: expected one of {VARIANTS}, got {variant!r}")
        return cls(**{**_TRAIN_DEFAULTS[variant], **overrides})

    def validate(self) -> "TrainConfig":
        _check(self.r_init > 0, "train.r_init", "must be > 0")
        _check(self.epochs >= 1, "train.epochs", "must be >= 1")
        _check(self.batch_size >= 1, "train.batch_size", "must be >= 1")
        _check(self.optimizer in ("adam", "adamax"), "train.optimizer", "must be adam or adamax")
        _check(0.0 <= self.beta1 < 1.0, "train.beta1", "must be in [0, 1)")
        _check(0.0 <= self.beta2 < 1.0, "train.beta2", "must be in [0, 1)")
        _check(self.eps > 0, "train.eps", "must be > 0")
        return self


@dataclass(frozen=True)
class DataConfig:
    csv: str = ""
    manifests: str = ""
    fold: int = 0
    cross_validate: bool = False


@dataclass(frozen=True)
class EmbeddingConfig:
    init: str = "random"
    vectors: str = ""
    method: str = "sum"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    out: str = "runs/default"
    seed: int = 0

    def validate(self, check_paths: bool = True) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        _check(self.data.fold >= 0, "data.fold", "must be >= 0")
        _check(self.embedding.init in ("random", "pretrained"), "embedding.init", "must be random or pretrained")
        _check(self.embedding.method in ("sum", "mean"), "embedding.method", "must be sum or mean")
        if check_paths:
            _check(bool(self.data.csv) and Path(self.data.csv).is_file(), "data.csv", f"file not found: {self.data.csv!r}")
            _check(bool(self.data.manifests) and Path(self.data.manifests).is_dir(), "data.manifests",
                   f"directory not found: {self.data.manifests!r}")
            if self.embedding.init == "pretrained":
                _check(Path(self.embedding.vectors).is_file(), "embedding.vectors",
                       f"file not found: {self.embedding.vectors!r}")
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, model=replace(self.model, seed=seed), train=replace(self.train, seed=seed))

    def canonical(self) -> str:
        lines = []
        for section in ("model", "train", "data", "embedding"):
            obj = getattr(self, section)
            for f in fields(obj):
                lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
        lines.append(f"run.out = {self.out}")
        lines.append(f"run.seed = {self.seed}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """Identity of the experiment; the output location is not part of it."""
        kept = [ln for ln in self.canonical().splitlines(keepends=True) if not ln.startswith("run.out = ")]
        return hashlib.sha256("".join(kept).encode()).hexdigest()[:16]


def _check(ok: bool, name: str, message: str) -> None:
    if not ok:
        raise ConfigError(f"{name}: {message}")


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(section: str, f, raw: str):
    name = f"{section}.{f.name}"
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None


def _section(parser: configparser.ConfigParser, section: str, cls, base):
    if not parser.has_section(section):
        return base
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, raw in parser.items(section):
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
        values[key] = _parse(section, known[key], raw)
    return replace(base, **values)


def load_run_config(path: str | Path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config: malformed file {path}: {exc}") from None

    for section in parser.sections():
        if section not in ("model", "train", "data", "embedding", "run"):
            raise ConfigError(f"{section}: unknown section")
    variant = parser.get("model", "variant", fallback=BIGRU).strip()
    if variant not in VARIANTS:
        raise ConfigError(f"model.variant: must be one of {VARIANTS}, got {variant!r}")
    seed = 0
    out = "runs/default"
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key == "seed":
                try:
                    seed = int(raw)
                except ValueError:
                    raise ConfigError(f"run.seed: cannot parse {raw!r} as int") from None
            elif key == "out":
                out = raw.strip()
            else:
                raise ConfigError(f"run.{key}: unknown field")
    model = _section(parser, "model", ModelConfig, ModelConfig.for_variant(variant, seed=seed))
    train = _section(parser, "train", TrainConfig, TrainConfig.for_variant(variant, seed=seed))
    data = _section(parser, "data", DataConfig, DataConfig())
    emb = _section(parser, "embedding", EmbeddingConfig, EmbeddingConfig())
    cfg = RunConfig(model=model, train=train, data=data, embedding=emb, out=out, seed=seed)
    return cfg
