"""Dataclass configuration for experiments, loadable from nested YAML."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..acoustic import FINETUNE_LR, TrainConfig
from ..corruptor import CorruptionConfig
from ..decode import DecoderConfig

REGIMES = ("weak_only", "wsp_ft", "direct_ft", "self_training")
MODES = ("random", "full")
FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)
DECODES = ("greedy", "lm")

# bump when a change alters experiment outputs, so stale cached cells are not reused
CELL_FORMAT = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VoiceConfig:
    dim: int = 16
    noise_sigma: float = 0.3
    dur_min: int = 2
    dur_max: int = 5
    channel_sigma: float = 0.05
    crossfade: bool = False
    seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    len_min: int = 4
    len_max: int = 10
    # sentences draw from the most frequent words of the bundled list
    vocab_size: int = 300
    seed: int = 1
    voice: VoiceConfig = field(default_factory=VoiceConfig)
    # a different prototype seed for the clean subset models a domain shift
    clean_voice_seed: int | None = None
    # optional manifests that replace the synthetic corpora
    train_manifest: str | None = None
    dev_manifest: str | None = None
    test_manifest: str | None = None


@dataclass(frozen=True)
class LMConfig:
    n: int = 4
    k: float = 0.1


@dataclass(frozen=True)
class ModelConfig:
    context: int = 2
    hidden: int = 128


@dataclass(frozen=True)
class WorkbenchConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(lr=FINETUNE_LR, max_epochs=10))
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    lm: LMConfig = field(default_factory=LMConfig)


@dataclass(frozen=True)
class ExperimentSpec:
    regime: str = "weak_only"
    mode: str = "random"
    fraction: float = 0.0
    seeds: tuple = (0, 1, 2, 3, 4)
    clean_subset_size: int = 50
    decode: str = "both"
    pool_fraction: float = 0.4
    teacher: str = "direct_ft"
    pseudo_label_decode: str = "lm"
    # the weak-only cell a fine-tune starts from; defaults to (mode, fraction)
    source_mode: str | None = None
    source_fraction: float | None = None
    config: WorkbenchConfig = field(default_factory=WorkbenchConfig)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown corruption mode {self.mode!r}")
        if self.fraction not in FRACTIONS:
            raise ConfigError(f"fraction must be one of {FRACTIONS}, got {self.fraction}")
        if self.decode not in ("greedy", "lm", "both"):
            raise ConfigError(f"unknown decode {self.decode!r}")
        if self.teacher not in ("direct_ft", "wsp_ft"):
            raise ConfigError(f"unknown teacher {self.teacher!r}")
        if self.pseudo_label_decode not in DECODES:
            raise ConfigError(f"unknown pseudo-label decode {self.pseudo_label_decode!r}")
        if self.clean_subset_size < 0 or not 0.0 <= self.pool_fraction <= 1.0:
            raise ConfigError("need clean_subset_size >= 0 and pool_fraction in [0, 1]")

    @property
    def decodes(self) -> tuple:
        return DECODES if self.decode == "both" else (self.decode,)

    def with_(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SweepGrid:
    regimes: tuple = REGIMES
    modes: tuple = MODES
    fractions: tuple = FRACTIONS
    seeds: tuple = (0, 1, 2, 3, 4)
    # regimes that ignore corruption run once per seed on this cell
    fixed_cell: tuple = ("random", 1.0)
    clean_subset_size: int = 50
    pool_fraction: float = 0.4
    teacher: str = "direct_ft"
    pseudo_label_decode: str = "lm"


@dataclass(frozen=True)
class RunConfig:
    workbench: WorkbenchConfig = field(default_factory=WorkbenchConfig)
    sweep: SweepGrid = field(default_factory=SweepGrid)
    out_dir: str = "runs/default"
    seed: int = 0


# -- (de)serialisation ------------------------------------------------------


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            value = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple):
            if isinstance(value, list):
                value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
            elif not isinstance(value, tuple):
                raise ConfigError(f"{where}.{name}: expected a list")
        elif isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def from_dict(cls, data, where: str = "config"):
    return _build(cls, data, where)


def load_config(path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    return from_dict(RunConfig, raw or {}, str(path))


def dump_config(cfg) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def content_hash(obj) -> str:
    blob = json.dumps(to_dict(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
