"""Run configuration: one strict JSON document for the whole pipeline.

Unknown keys are rejected with the offending path so a typo in a config
file fails loudly instead of silently running defaults.
"""
from __future__ import annotations

import json
import typing
from dataclasses import dataclass, field, fields, is_dataclass

from .data import GeneratorSpec
from .encoder import ModelConfig
from .ot import OtConfig
from .training import TrainConfig

__all__ = ["RunConfig", "EvalConfig", "ConfigInvalid", "load_config",
           "config_from_dict", "config_to_dict", "default_config"]


class ConfigInvalid(ValueError):
    """Raised for unknown keys, wrong types or failed invariants."""


@dataclass
class EvalConfig:
    beam_size: int = 5
    max_len: int = 32
    average_k: int = 0          # 0 = evaluate the best single checkpoint
    retrieval_examples: int = 200

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.average_k < 0:
            raise ValueError("average_k must be >= 0")


def _default_mt() -> TrainConfig:
    return TrainConfig(steps=3000, batch_size=16, base_lr=2e-3,
                       warmup_steps=100, label_smoothing=0.0)


@dataclass
class RunConfig:
    seed: int = 0
    train_size: int = 600
    valid_size: int = 200
    test_size: int = 200
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    mt: TrainConfig = field(default_factory=_default_mt)
    speech: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        for name in ("train_size", "valid_size", "test_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _coerce(value, hint, path: str):
    """Build `hint` from plain JSON data, complaining with `path`."""
    origin = typing.get_origin(hint)
    if is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigInvalid(f"{path}: expected object for {hint.__name__}")
        hints = typing.get_type_hints(hint)
        known = {f.name for f in fields(hint)}
        for key in value:
            if key not in known:
                raise ConfigInvalid(f"{path}.{key}: unknown key")
        kwargs = {k: _coerce(v, hints[k], f"{path}.{k}")
                  for k, v in value.items()}
        try:
            return hint(**kwargs)
        except ValueError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigInvalid(f"{path}: expected array")
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]")
                         for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigInvalid(f"{path}: expected {len(args)} entries")
        return tuple(_coerce(v, a, f"{path}[{i}]")
                     for i, (v, a) in enumerate(zip(value, args)))
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(f"{path}: expected float")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(f"{path}: expected int")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigInvalid(f"{path}: expected bool")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigInvalid(f"{path}: expected str")
        return value
    raise ConfigInvalid(f"{path}: unsupported config field type {hint!r}")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigInvalid("config: top level must be an object")
    return _coerce(doc, RunConfig, "config")


def config_to_dict(cfg) -> dict:
    """Plain-JSON form of a (possibly nested) config dataclass."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            out[f.name] = config_to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = [config_to_dict(x) if is_dataclass(x) else x
                           for x in v]
        else:
            out[f.name] = v
    return out


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config file and apply dotted-path overrides.

    Overrides use keys like ``speech.steps`` or ``model.d``; values are
    parsed as JSON when possible, else taken as strings.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config: not valid JSON ({exc})") from exc
    for key, raw in (overrides or {}).items():
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"config.{key}: cannot override scalar")
        try:
            node[parts[-1]] = json.loads(raw)
        except json.JSONDecodeError:
            node[parts[-1]] = raw
    return config_from_dict(doc)


def default_config() -> RunConfig:
    return RunConfig()
