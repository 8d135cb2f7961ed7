"""Unified JSON pipeline configuration with defaults and strict key checking."""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .augment import AugmentConfig
from .errors import ConfigError, DataError
from .model import ModelConfig, TrainConfig
from .preprocess import NormalizationConfig
from .skeleton import _data_path, load_class_table, load_joint_map
from .windowing import WindowConfig


@dataclass(frozen=True)
class ModelSection:
    """Architecture knobs; input width and class count come from the data."""

    stem_filters: int = 64
    stages: tuple[tuple[int, int, int], ...] = ((2, 64, 1), (2, 128, 2), (2, 256, 2))
    kernel_size: int = 8
    dropout_prob: float = 0.3

    def __post_init__(self):
        try:
            object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        except (TypeError, ValueError):
            raise ConfigError("must be a list of [blocks, filters, stride]", "model.stages") from None
        if any(len(s) != 3 for s in self.stages):
            raise ConfigError("must be a list of [blocks, filters, stride]", "model.stages")
        self.build(3, 2)

    def build(self, input_channels: int, num_classes: int) -> ModelConfig:
        return ModelConfig(input_channels, num_classes, self.stem_filters, self.stages,
                           self.kernel_size, self.dropout_prob)


_SECTIONS = {
    "normalization": NormalizationConfig,
    "augmentation": AugmentConfig,
    "window": WindowConfig,
    "model": ModelSection,
    "train": TrainConfig,
}


def _resource_exists(value: str, key: str):
    p = Path(value)
    if p.suffix == ".json":
        if not p.exists():
            raise ConfigError(f"file {value} does not exist", key)
    elif not _data_path(f"{value}.json").is_file():
        raise ConfigError(f"no built-in resource named {value!r}", key)


@dataclass(frozen=True)
class PipelineConfig:
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    joint_map: str | None = None
    class_table: str = "synth_classes"
    seed: int = 0

    def __post_init__(self):
        if self.joint_map is not None:
            _resource_exists(self.joint_map, "joint_map")
        _resource_exists(self.class_table, "class_table")

    def load_joint_map(self):
        return None if self.joint_map is None else load_joint_map(self.joint_map)

    def load_class_table(self):
        return load_class_table(self.class_table)

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, enum.Enum):
                return v.value
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            return v
        return plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _build(cls, raw: Any, prefix: str):
    if not isinstance(raw, Mapping):
        raise ConfigError("must be an object", prefix)
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError("unknown key", f"{prefix}.{key}")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), prefix) from None


def config_from_dict(raw: Mapping) -> PipelineConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("top level must be an object")
    known = {f.name for f in fields(PipelineConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError("unknown key", key)
    kw = {}
    for key, value in raw.items():
        kw[key] = _build(_SECTIONS[key], value, key) if key in _SECTIONS else value
    return PipelineConfig(**kw)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Read a JSON config file; ``None`` gives all defaults."""
    if path is None:
        return PipelineConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    return config_from_dict(raw)
