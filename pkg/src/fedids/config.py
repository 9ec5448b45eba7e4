"""Experiment configuration: defaults, presets, JSON files and flag overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .model import ConfigError, ModelConfig


@dataclass
class DatasetConfig:
    path: str | None = None
    label_column: str = "Attack_type"
    fraction: float = 1.0
    train_fraction: float = 0.8


@dataclass
class TrainingConfig:
    lr: float = 5e-5
    weight_decay: float = 1e-3
    batch_size: int = 32
    epochs: int = 4


@dataclass
class FederatedConfig:
    clients: int = 10
    alpha: float = 0.07
    iid: bool = False
    rounds: int = 10
    local_epochs: int = 1
    workers: int = 1


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    federated: FederatedConfig = field(default_factory=FederatedConfig)
    seed: int = 0
    out_dir: str = "runs"

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        t, f, d = self.training, self.federated, self.dataset
        if t.lr < 0 or t.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if t.batch_size < 1 or t.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if f.clients < 1:
            raise ConfigError(f"clients must be at least 1, got {f.clients}")
        if f.rounds < 1 or f.local_epochs < 1:
            raise ConfigError("rounds and local_epochs must be at least 1")
        if not f.iid and f.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {f.alpha}")
        if f.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0.0 < d.fraction <= 1.0:
            raise ConfigError(f"fraction must be in (0, 1], got {d.fraction}")
        if not 0.0 < d.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {d.train_fraction}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        return self


# desk-scale model used by the acceptance runs
MINI_MODEL = ModelConfig(num_layers=2, hidden=64, heads=2, intermediate=256, seq_len=64, vocab=512, dropout=0.1)

PRESETS: dict[str, dict] = {
    "full": {},
    "mini": {"model": {k: v for k, v in asdict(MINI_MODEL).items() if k != "num_classes"}},
}

_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "federated": FederatedConfig,
}


def _merge_section(current, updates: Mapping[str, Any], section: str):
    known = {f.name for f in fields(current)}
    unknown = set(updates) - known
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(sorted(unknown))}")
    return replace(current, **updates)


def merge(cfg: ExperimentConfig, updates: Mapping[str, Any]) -> ExperimentConfig:
    """Return ``cfg`` with nested ``updates`` applied; ``None`` values are skipped."""
    out = replace(cfg)
    for key, value in updates.items():
        if value is None:
            continue
        if key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"{key} must be an object")
            clean = {k: v for k, v in value.items() if v is not None}
            setattr(out, key, _merge_section(getattr(out, key), clean, key))
        elif key in ("seed", "out_dir"):
            setattr(out, key, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return out


def load_config(path: str | Path | None, preset: str | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        cfg = merge(cfg, PRESETS[preset])
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = merge(cfg, data)
    return cfg
