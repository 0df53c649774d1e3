"""Experiment configuration: YAML loading, defaults, and validation.

A config file is a flat mapping of experiment settings with two nested
blocks: ``kernel`` (a kernel expression tree) and ``train`` (optimizer
settings mirroring TrainConfig). Unknown keys are rejected rather than
ignored so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import yaml

from .errors import ConfigError
from .inference import TrainConfig
from .kernels import DEFAULT_KERNEL_CONFIG, make_spec
from .likelihoods import parse_variant


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "n-wp"
    nu: Optional[int] = None               # defaults to the construction rank
    n_inducing: int = 30
    kernel: dict = field(default_factory=lambda: DEFAULT_KERNEL_CONFIG)
    seed: int = 0
    demean: bool = True
    log1p_returns: bool = False
    n_splits: int = 10
    horizon: int = 10
    val_fraction: float = 0.02
    val_split_index: int = 0
    forecast_samples: int = 300
    scale_init: float = 1.0
    noise_init: float = 0.001
    jobs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        parse_variant(self.variant)        # raises on unknown variants
        if self.nu is not None and self.nu < 1:
            raise ConfigError(f"nu must be positive, got {self.nu}")
        if self.n_inducing < 1:
            raise ConfigError(f"n_inducing must be positive, got {self.n_inducing}")
        if self.n_splits < 1 or self.horizon < 1:
            raise ConfigError(
                f"n_splits and horizon must be positive, got {self.n_splits}, {self.horizon}"
            )
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if not 0 <= self.val_split_index < self.n_splits:
            raise ConfigError(
                f"val_split_index {self.val_split_index} out of range for {self.n_splits} splits"
            )
        if self.forecast_samples < 1:
            raise ConfigError(f"forecast_samples must be positive, got {self.forecast_samples}")
        if not self.scale_init > 0.0:
            raise ConfigError(f"scale_init must be positive, got {self.scale_init}")
        if not self.noise_init > 0.0:
            raise ConfigError(f"noise_init must be positive, got {self.noise_init}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be positive, got {self.jobs}")
        make_spec(self.kernel)             # raises on a malformed kernel tree

    def as_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> dict:
    """Read a YAML mapping; empty files produce an empty mapping."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"could not read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path!r} is not valid YAML: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path!r} must be a mapping, got {type(raw).__name__}")
    return raw


def build_experiment(mapping: Optional[dict] = None, **overrides) -> ExperimentConfig:
    """Turn a config mapping plus keyword overrides into an ExperimentConfig."""
    merged = dict(mapping or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    train_block = merged.pop("train", None)
    if train_block is not None:
        if isinstance(train_block, TrainConfig):
            merged["train"] = train_block
        elif isinstance(train_block, dict):
            train_known = {f.name for f in fields(TrainConfig)}
            train_unknown = set(train_block) - train_known
            if train_unknown:
                raise ConfigError(f"unknown train config keys: {sorted(train_unknown)}")
            merged["train"] = TrainConfig(**train_block)
        else:
            raise ConfigError("'train' must be a mapping of optimizer settings")
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
