"""Hyperparameter containers and the dotted-key config file format.

A config file is YAML. Keys may be nested (``aug: {window_len: 16}``) or
flat and dotted (``aug.window_len: 16``); both forms flatten to the same
dotted keys, which is also the form accepted by ``--set KEY=VALUE``.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


@dataclass
class AugmentationConfig:
    noise_std_ratio: float = 0.1
    window_len: int = 16
    max_segments_weak: int = 3
    max_segments_strong: int = 8
    normalize: bool = True

    def validate(self, length=None):
        if not (self.noise_std_ratio >= 0 and math.isfinite(self.noise_std_ratio)):
            raise ConfigError("must be a finite real >= 0", "aug.noise_std_ratio")
        if self.window_len < 2:
            raise ConfigError("must be >= 2", "aug.window_len")
        for name in ("max_segments_weak", "max_segments_strong"):
            value = getattr(self, name)
            if not 1 <= value <= self.window_len:
                raise ConfigError(f"must lie in [1, window_len={self.window_len}]", f"aug.{name}")
        if length is not None and self.window_len > length:
            raise ConfigError(f"window_len={self.window_len} exceeds series length {length}", "aug.window_len")


@dataclass
class GraphConfig:
    # None resolves against the sensor count, see resolve_edges()
    s_weak: int | None = None
    s_strong: int | None = None
    gnn_layers: int = 1

    def resolve_edges(self, num_sensors: int) -> tuple[int, int]:
        s_weak = self.s_weak if self.s_weak is not None else max(1, num_sensors - 1)
        s_strong = self.s_strong if self.s_strong is not None else min(2, s_weak)
        for key, value in (("graph.s_weak", s_weak), ("graph.s_strong", s_strong)):
            if not 1 <= value <= num_sensors:
                raise ConfigError(f"{value} outside [1, N={num_sensors}]", key)
        if s_strong > s_weak:
            raise ConfigError(f"s_strong={s_strong} must not exceed s_weak={s_weak}", "graph.s_strong")
        return s_weak, s_strong

    def validate(self, num_sensors=None):
        if self.gnn_layers < 0:
            raise ConfigError("must be >= 0", "graph.gnn_layers")
        if num_sensors is not None:
            self.resolve_edges(num_sensors)


@dataclass
class ModelConfig:
    d: int = 32
    cnn_channels: tuple[int, int] = (16, 32)
    transformer_layers: int = 2
    transformer_heads: int = 4
    kbar: int | None = None  # None -> half of the window count
    nonlinear_heads: bool = False
    summarizer: str = "transformer"  # "mean" is a debug summarizer

    def resolve_kbar(self, num_windows: int) -> int:
        kbar = self.kbar if self.kbar is not None else max(1, num_windows // 2)
        if kbar < 1:
            raise ConfigError("must be >= 1", "model.kbar")
        if kbar >= num_windows:
            raise ConfigError(
                f"nothing to predict: kbar={kbar} >= window count k={num_windows}", "model.kbar"
            )
        return kbar

    def validate(self):
        if self.d < 1:
            raise ConfigError("must be >= 1", "model.d")
        if len(self.cnn_channels) != 2 or min(self.cnn_channels) < 1:
            raise ConfigError("must be two positive widths", "model.cnn_channels")
        if self.transformer_layers < 0:
            raise ConfigError("must be >= 0", "model.transformer_layers")
        if self.transformer_heads < 1 or self.d % self.transformer_heads:
            raise ConfigError(
                f"d={self.d} is not divisible by transformer_heads={self.transformer_heads}",
                "model.transformer_heads",
            )
        if self.summarizer not in ("transformer", "mean"):
            raise ConfigError("must be 'transformer' or 'mean'", "model.summarizer")


@dataclass
class LossConfig:
    tau: float = 0.2
    lambda_mwtc: float = 1.0
    lambda_nc: float = 1.0
    lambda_gc: float = 1.0
    include_positive: bool = False
    batch_mean: bool = True

    def validate(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigError("must be > 0", "loss.tau")
        for name in ("lambda_mwtc", "lambda_nc", "lambda_gc"):
            if not getattr(self, name) >= 0:
                raise ConfigError("must be >= 0", f"loss.{name}")


@dataclass
class OptimConfig:
    batch_size: int = 128
    learning_rate: float = 3e-4
    epochs_pretrain: int = 40
    epochs_probe: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_schedule: str = "none"  # or "cosine"

    def validate(self):
        for name in ("batch_size", "epochs_pretrain", "epochs_probe"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"train.{name}")
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", "train.learning_rate")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)", "train.beta1")
        if not self.eps > 0:
            raise ConfigError("must be > 0", "train.eps")
        if self.weight_decay < 0:
            raise ConfigError("must be >= 0", "train.weight_decay")
        if self.lr_schedule not in ("none", "cosine"):
            raise ConfigError("must be 'none' or 'cosine'", "train.lr_schedule")


_SECTIONS = {
    "aug": AugmentationConfig,
    "graph": GraphConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": OptimConfig,
}


@dataclass
class TrainConfig:
    aug: AugmentationConfig = field(default_factory=AugmentationConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0

    def validate(self, num_sensors=None, length=None) -> "TrainConfig":
        self.aug.validate(length)
        self.graph.validate(num_sensors)
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        if length is not None:
            self.model.resolve_kbar(length // self.aug.window_len)
        return self

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["model"]["cnn_channels"] = list(self.model.cnn_channels)
        return out

    def flat(self) -> dict[str, Any]:
        return flatten(self.to_dict())

    def hash(self) -> str:
        blob = json.dumps(self.flat(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def replace(self, **dotted) -> "TrainConfig":
        """Copy with dotted-key overrides, e.g. ``cfg.replace(**{"loss.tau": 1.0})``."""
        return from_flat({**self.flat(), **dotted})

    def copy(self) -> "TrainConfig":
        return copy.deepcopy(self)


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, path + "."))
        else:
            out[path] = value
    return out


def _coerce(value, default, key):
    if isinstance(default, bool):
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"expected a boolean, got {value!r}", key)
        if isinstance(value, bool):
            return value
        raise ConfigError(f"expected a boolean, got {value!r}", key)
    if isinstance(default, tuple) or key == "model.cnn_channels":
        if isinstance(value, str):
            value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a list of integers, got {value!r}", key) from None
    try:
        if isinstance(default, int) or key in ("graph.s_weak", "graph.s_strong", "model.kbar"):
            if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
                if default is None:
                    return None
                raise ConfigError("must not be null", key)
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"expected an integer, got {value!r}", key)
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"could not parse {value!r}", key) from None
    if isinstance(default, str):
        return str(value)
    return value


def from_flat(flat: dict[str, Any]) -> TrainConfig:
    """Build a config from dotted keys; unknown keys are rejected by path."""
    cfg = TrainConfig()
    for key, value in flat.items():
        if key == "seed":
            cfg.seed = _coerce(value, 0, key)
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError("unknown config key", key)
        target = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(target)}
        if name not in names:
            raise ConfigError("unknown config key", key)
        setattr(target, name, _coerce(value, getattr(type(target)(), name), key))
    return cfg


def from_dict(tree: dict[str, Any]) -> TrainConfig:
    return from_flat(flatten(tree))


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> TrainConfig:
    flat: dict[str, Any] = {}
    if path is not None:
        try:
            tree = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config file: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError("config file must contain a mapping")
        flat = flatten(tree)
    flat.update(overrides or {})
    return from_flat(flat)


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    return key.strip(), yaml.safe_load(raw) if raw.strip() else raw
