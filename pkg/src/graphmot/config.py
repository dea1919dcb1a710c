"""Run configuration: YAML files mapped strictly onto the dataclass configs.

Unknown sections or keys are fatal so typos never pass silently; CLI
`--set section.key=value` overrides file values.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Optional, Type

import yaml

from .extract import ExtractConfig
from .graph import GraphConfig
from .metrics import EvalConfig
from .model import ModelConfig
from .simulate import SceneConfig, difficulty_suite
from .train import TrainConfig


class ConfigFileError(ValueError):
    pass


SECTIONS: dict[str, type] = {
    "scene": SceneConfig,
    "graph": GraphConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "extract": ExtractConfig,
    "eval": EvalConfig,
}


def load_config(path: Optional[str | Path]) -> dict[str, dict]:
    if path is None:
        return {}
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigFileError(f"{path}: top level must be a mapping of sections")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigFileError(f"{path}: unknown config sections {sorted(unknown)}")
    for name, body in raw.items():
        if body is None:
            raw[name] = {}
        elif not isinstance(body, dict):
            raise ConfigFileError(f"{path}: section '{name}' must be a mapping")
    return raw


def apply_overrides(cfg: dict[str, dict], overrides: list[str]) -> dict[str, dict]:
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigFileError(f"override '{item}' is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise ConfigFileError(f"override targets unknown section '{section}'")
        cfg.setdefault(section, {})[key] = yaml.safe_load(value)
    return cfg


def _coerce(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def build_section(cls: Type, body: dict, defaults: Optional[dict] = None):
    """Instantiate one config dataclass; unknown keys are fatal."""
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(body) - field_names
    if unknown:
        raise ConfigFileError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = dict(defaults or {})
    kwargs.update({k: _coerce(v) for k, v in body.items()})
    kwargs = {k: v for k, v in kwargs.items() if k in field_names}
    return cls(**kwargs)


def build_scene(cfg: dict[str, dict]) -> SceneConfig:
    """Scene section; an optional `tier` key starts from a named difficulty tier."""
    body = dict(cfg.get("scene", {}))
    tier = body.pop("tier", None)
    defaults: dict = {}
    if tier is not None:
        by_name = {c.name: c for c in difficulty_suite()}
        if tier not in by_name:
            raise ConfigFileError(f"unknown tier '{tier}'; expected one of {sorted(by_name)}")
        defaults = dataclasses.asdict(by_name[tier])
    return build_section(SceneConfig, body, defaults={k: _coerce(v) for k, v in defaults.items()})


def build_graph(cfg: dict[str, dict], scene_meta: Optional[dict] = None) -> GraphConfig:
    defaults = {}
    if scene_meta:
        defaults = {
            "fps": scene_meta["fps"],
            "image_width": scene_meta["image_width"],
            "image_height": scene_meta["image_height"],
        }
    return build_section(GraphConfig, cfg.get("graph", {}), defaults)


def build_model_cfg(cfg: dict[str, dict], scene_meta: Optional[dict] = None) -> ModelConfig:
    defaults: dict = {}
    if scene_meta:
        defaults = {
            "n_cameras": scene_meta["n_cameras"],
            "image_width": scene_meta["image_width"],
            "image_height": scene_meta["image_height"],
            "scene_bounds": _coerce(scene_meta["bounds"]),
        }
        defaults.update({"s": 30, "hidden": 32, "dtype": "float32",
                         "attributes": ("bbox", "world", "time", "view", "conf")})
    return build_section(ModelConfig, cfg.get("model", {}), defaults)


def build_train(cfg: dict[str, dict]) -> TrainConfig:
    return build_section(TrainConfig, cfg.get("train", {}))


def build_extract(cfg: dict[str, dict]) -> ExtractConfig:
    return build_section(ExtractConfig, cfg.get("extract", {}))


def build_eval(cfg: dict[str, dict]) -> EvalConfig:
    return build_section(EvalConfig, cfg.get("eval", {}))
