"""Run configuration: world + model + training sections with strict parsing."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig
from .world import WorldConfig

_SECTIONS = {"world": WorldConfig, "model": ModelConfig, "train": TrainConfig}
_REQUIRED = {"world": ("seed",), "model": (), "train": ("seed", "steps")}


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig
    model: ModelConfig
    train: TrainConfig

    def to_dict(self) -> dict:
        out = {}
        for section in _SECTIONS:
            raw = dataclasses.asdict(getattr(self, section))
            out[section] = {k: list(v) if isinstance(v, tuple) else v for k, v in raw.items()}
        return out


def _build_section(name: str, data: dict):
    cls = _SECTIONS[name]
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    valid = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in valid:
            raise ConfigError(f"unknown field {name}.{key}")
    for key in _REQUIRED[name]:
        if key not in raw:
            raise ConfigError(f"missing required field {name}.{key}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        section = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in section '{name}': {exc}") from exc
    return section


def parse_run_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a JSON object")
    for key in data:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section '{key}'")
    for name in ("world", "train"):
        if name not in data:
            raise ConfigError(f"missing required config section '{name}'")
    cfg = RunConfig(
        world=_build_section("world", data),
        model=_build_section("model", data),
        train=_build_section("train", data),
    )
    cfg.model.validate()
    cfg.train.validate()
    if cfg.world.d_id < 1 or cfg.world.d_mo < 1 or cfg.world.d_img < 1:
        raise ConfigError("world dimensions must be positive")
    if cfg.world.identity_count < 2:
        raise ConfigError("world.identity_count must be at least 2")
    return cfg


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_run_config(data)
