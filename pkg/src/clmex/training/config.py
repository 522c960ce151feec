"""Run configuration, loadable from a TOML file with one table per stage.

Defaults are desk-scale. The published setup used 500 pre-training epochs,
512-d embeddings, 128-d projections and 224x224 images; the values below
shrink those so a full study fits on a laptop CPU.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli

from ..data.augment import AugmentConfig
from ..data.sampler import SamplerConfig
from ..data.synthetic import SyntheticConfig
from ..models import EncoderConfig, ProjectionConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    manifest: Optional[str] = None  # None: generate the synthetic set below
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    test_fraction: float = 0.2
    split_seed: int = 0


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    dtype: str = "float64"


@dataclass
class PretrainConfig:
    epochs: int = 50  # paper: 500
    lr: float = 1e-4
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    loss: str = "clmex"
    temperature: float = 0.1
    positive_count: str = "originals"
    reduction: str = "sum"
    groups_per_batch: int = 8
    views_per_group: Optional[int] = None
    group_order: str = "shuffled"
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.groups_per_batch, self.views_per_group, self.group_order)


@dataclass
class DownstreamConfig:
    probe_epochs: int = 10
    finetune_epochs: int = 50
    lr: float = 1e-4
    weight_decay: float = 0.0
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    label_fraction: float = 1.0
    batch_size: int = 32
    val_fraction: float = 0.1
    augment: bool = True


@dataclass
class BaselineConfig:
    epochs: Optional[int] = None  # None: probe_epochs + finetune_epochs, the downstream budget


@dataclass
class RunConfig:
    seed: int = 7
    deterministic: bool = True
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def validate(self) -> "RunConfig":
        p, d = self.pretrain, self.downstream
        if p.epochs < 1 or d.probe_epochs < 0 or d.finetune_epochs < 0 or d.probe_epochs + d.finetune_epochs < 1:
            raise ConfigError("epoch counts must be >= 1 (downstream phases may be 0 individually)")
        if self.baseline.epochs is not None and self.baseline.epochs < 1:
            raise ConfigError("baseline.epochs must be >= 1")
        if not 0.0 < d.label_fraction <= 1.0:
            raise ConfigError(f"label_fraction must lie in (0, 1], got {d.label_fraction}")
        if not 0.0 <= d.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if p.loss not in ("clmex", "simclr", "supcon"):
            raise ConfigError(f"unknown pre-training loss {p.loss!r}")
        if p.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown pre-training schedule {p.schedule!r}")
        if p.positive_count not in ("originals", "augmented"):
            raise ConfigError(f"unknown positive_count {p.positive_count!r}")
        if p.reduction not in ("sum", "mean"):
            raise ConfigError(f"unknown reduction {p.reduction!r}")
        if p.group_order not in ("shuffled", "by_subject"):
            raise ConfigError(f"unknown group_order {p.group_order!r}")
        if p.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if p.lr < 0 or d.lr < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.model.dtype not in ("float64", "float32"):
            raise ConfigError("model.dtype must be float64 or float32")
        if self.data.manifest is not None and not Path(self.data.manifest).is_file():
            raise ConfigError(f"manifest not found: {self.data.manifest}")
        if not 0.0 < self.data.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must lie in (0, 1)")
        try:
            self.data.synthetic.validate()
            self.model.encoder.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.model.projection.output_dim > self.model.encoder.embedding_dim:
            raise ConfigError("projection output_dim must not exceed the embedding dim")
        return self

    def baseline_epochs(self) -> int:
        d = self.downstream
        return self.baseline.epochs if self.baseline.epochs is not None else d.probe_epochs + d.finetune_epochs

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    def echo(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"[{where}] must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in values.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}" if where else name)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(values: dict) -> RunConfig:
    try:
        return _build(RunConfig, values, "").validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        values = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(values)
