"""Run configuration: defaults, a flat key=value file format, and mapping to
generator and model settings."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import GeneratorSettings
from .model import ModelSettings
from .sequence import TASKS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    embed_dim: int = 96
    max_seq_len: int = 120
    depth: int = 3
    streams: int = 2
    heads: int = 1
    shared_experts: int = 2
    private_experts: int = 1
    embed_std: float = 0.05
    # training
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 1
    max_steps: int = 0  # 0 means run the configured epochs
    precision: str = "float64"
    eval_every: int = 0
    checkpoint_every: int = 0
    negatives: str = "fixed"  # or "per_epoch"
    circular_mae: bool = False
    weight_when: float = 1.0
    weight_how: float = 1.0
    weight_where: float = 1.0
    weight_via: float = 1.0
    # paths and variant selection
    data_dir: str = "data"
    out_dir: str = "run"
    checkpoint: str = ""
    variant: str = ""
    # synthetic generator
    users: int = 1000
    pois: int = 5000
    gids: int = 500
    categories: int = 50
    arids: int = 20
    weathers: int = 10
    actions: int = 5
    modes: int = 5
    interactions_mean: float = 25.0
    max_interactions: int = 50
    p_fav: float = 0.6
    p_mode: float = 0.9
    p_time: float = 0.7
    p_via: float = 0.5
    via_rate: float = 0.3
    p_home: float = 0.8
    mode_missing: float = 0.2
    profile_vocab: int = 8
    profile_missing: float = 0.2

    def __post_init__(self):
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.negatives not in ("fixed", "per_epoch"):
            raise ConfigError(f"negatives must be fixed or per_epoch, got {self.negatives!r}")
        for name in ("embed_dim", "max_seq_len", "depth", "streams", "heads", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def generator_settings(self) -> GeneratorSettings:
        return GeneratorSettings(
            users=self.users,
            pois=self.pois,
            gids=self.gids,
            categories=self.categories,
            arids=self.arids,
            weathers=self.weathers,
            actions=self.actions,
            modes=self.modes,
            interactions_mean=self.interactions_mean,
            max_interactions=self.max_interactions,
            p_fav=self.p_fav,
            p_mode=self.p_mode,
            p_time=self.p_time,
            p_via=self.p_via,
            via_rate=self.via_rate,
            p_home=self.p_home,
            mode_missing=self.mode_missing,
            profile_vocab=self.profile_vocab,
            profile_missing=self.profile_missing,
        )

    def model_settings(self) -> ModelSettings:
        return ModelSettings(
            width=self.embed_dim,
            depth=self.depth,
            streams=self.streams,
            heads=self.heads,
            max_len=self.max_seq_len,
            shared_experts=self.shared_experts,
            private_experts=self.private_experts,
            tasks=TASKS,
            embed_std=self.embed_std,
            task_weights={
                "when": self.weight_when,
                "how": self.weight_how,
                "where": self.weight_where,
                "via": self.weight_via,
            },
            dtype=self.dtype,
        )

    def resolved_model(self) -> tuple:
        """(ModelSettings, active task tuple) with any variant applied."""
        from .ablation import apply_variant

        return apply_variant(self.model_settings(), self.variant or None)

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _parse_value(raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(raw)
    return kind(raw)


def parse_config_text(text: str) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys fail."""
    field_types = {f.name: f.type for f in fields(RunConfig)}
    # dataclass fields carry string annotations under future-style modules
    resolved = {}
    defaults = RunConfig()
    for name in field_types:
        resolved[name] = type(getattr(defaults, name))
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {line_no}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in resolved:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        try:
            values[key] = _parse_value(raw, resolved[key])
        except ValueError:
            raise ConfigError(f"config line {line_no}: bad value {raw!r} for {key}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))
