"""Training/model configuration, presets and ``key=value`` config files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any, Mapping


@dataclass
class TrainConfig:
    d_model: int = 512
    action_dim: int = 32
    enc_layers: int = 3
    dec_layers: int = 4
    heads: int = 4
    dropout: float = 0.1
    label_smoothing: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup: int = 4000
    examples_per_update: int = 100
    micro_batch: int = 100
    max_updates: int = 100_000
    max_epochs: int = 0  # 0 = unbounded
    seed: int = 1
    length_threshold: int = 0  # max source tokens kept for training; 0 = no filter
    min_freq: int = 1
    dtype: str = "float64"
    validate_every: int = 0
    checkpoint_every: int = 0
    stop_accuracy: float = 0.0  # stop once teacher-forced train accuracy reaches this; 0 = off
    accuracy_every: int = 25

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("d_model", "action_dim", "enc_layers", "dec_layers", "heads", "warmup",
                    "examples_per_update", "micro_batch", "max_updates", "min_freq", "accuracy_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_epochs", "length_threshold", "validate_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_model % 2 or self.d_model % self.heads:
            raise ValueError("d_model must be even and divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if not 0.0 <= self.stop_accuracy <= 1.0:
            raise ValueError("stop_accuracy must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "TrainConfig":
        return cls(**coerce(values))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **coerce(changes))


PRESETS: dict[str, dict[str, Any]] = {
    "full": {},
    "desk": {"d_model": 64, "enc_layers": 2, "dec_layers": 4, "heads": 4, "warmup": 200},
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **coerce(overrides)})


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def coerce(values: Mapping[str, Any]) -> dict[str, Any]:
    """Convert string values to the field types; unknown keys are rejected."""
    out = {}
    defaults = TrainConfig.__dataclass_fields__
    for key, value in values.items():
        if key not in defaults:
            raise KeyError(f"unknown configuration key {key!r}")
        kind = type(defaults[key].default)
        if isinstance(value, str) and kind is not str:
            value = kind(float(value)) if kind is int and "e" in value.lower() else kind(value)
        out[key] = value
    return out


def read_kv_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def format_kv(values: Mapping[str, Any]) -> str:
    return "".join(f"{k}={v}\n" for k, v in values.items())
