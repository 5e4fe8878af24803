"""Configuration dataclasses, TOML loading, validation, and digesting.

A config file is TOML with sections [features], [model], [train], [synth]
and [paths]; unknown sections or keys are rejected.  CLI flags override file
values.  The canonical JSON serialization (sorted keys) feeds the digest that
checkpoints embed and every report echoes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    clip_samples: int = 160000
    win: int = 1024
    hop: int = 512
    mel_bins: int = 128
    alpha: float = 2.0
    log_floor: float = 1e-10
    tsg: bool = True

    def validate(self):
        if self.sample_rate <= 0 or self.clip_samples <= 0:
            raise ConfigError("sample_rate and clip_samples must be positive")
        if self.win <= 0 or self.hop <= 0 or self.mel_bins <= 0:
            raise ConfigError("win, hop and mel_bins must be positive")
        if self.clip_samples < self.win:
            raise ConfigError("clip_samples shorter than one analysis window")
        if self.alpha <= 0:
            raise ConfigError("gate scale alpha must be > 0")

    @property
    def frames(self) -> int:
        return 1 + (self.clip_samples - self.win) // self.hop


@dataclass
class ModelConfig:
    d_model: int = 128
    d_state: int = 16
    expand: int = 2
    depth: int = 2
    conv_kernel: int = 4
    tgram_blocks: int = 3
    time_patches: int = 12
    freq_patches: int = 16
    paths: str = "st"
    discretization: str = "zoh"
    ssm_skip: bool = True
    scan_chunk: int = 0
    arcface_margin: float = 0.7
    arcface_scale: float = 30.0

    def validate(self):
        if self.paths not in ("s", "t", "st"):
            raise ConfigError(f"paths must be one of s/t/st, got {self.paths!r}")
        if self.discretization not in ("zoh", "euler-literal"):
            raise ConfigError(
                f"discretization must be zoh or euler-literal, got {self.discretization!r}"
            )
        for name in ("d_model", "d_state", "expand", "depth", "conv_kernel",
                     "tgram_blocks", "time_patches", "freq_patches"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def d_inner(self) -> int:
        return self.d_model * self.expand


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 128
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    seed: int = 0
    precision: str = "f32"

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


@dataclass
class SynthConfig:
    clip_seconds: float = 2.0
    sample_rate: int = 16000
    train_clips: int = 40
    test_normal: int = 10
    test_anomaly: int = 10
    seed: int = 0

    def validate(self):
        if self.clip_seconds <= 0 or self.sample_rate <= 0:
            raise ConfigError("clip_seconds and sample_rate must be positive")
        for name in ("train_clips", "test_normal", "test_anomaly"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class PathsConfig:
    corpus_root: str = ""
    cache_dir: str = ""
    checkpoint: str = ""
    report_dir: str = ""

    def validate(self):
        pass


@dataclass
class ExperimentConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        for section in (self.features, self.model, self.train, self.synth, self.paths):
            section.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_json().encode()).digest()


_SECTIONS = {
    "features": FeatureConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "paths": PathsConfig,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a table")
        known = {f.name: f for f in fields(_SECTIONS[section])}
        target = getattr(cfg, section)
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            current = getattr(target, key)
            if isinstance(current, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{section}.{key} must be a boolean")
            elif isinstance(current, int) and isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be a number")
            elif isinstance(current, float) and isinstance(value, int):
                value = float(value)
            elif not isinstance(value, type(current)):
                raise ConfigError(
                    f"{section}.{key} expects {type(current).__name__}, got {type(value).__name__}"
                )
            setattr(target, key, value)
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return config_from_dict(data)
