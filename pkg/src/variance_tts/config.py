"""Flat ``key = value`` run configuration.

Keys are the field names of AudioConfig, ModelConfig, OptimizerConfig and
TrainConfig, plus ``w_<term>`` loss weights and ``preset`` (``full`` or
``tiny``). ``#`` starts a comment. Values are Python literals; bare words are
strings.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dsp import AudioConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import LossWeights, OptimizerConfig, TrainConfig

PRESETS = ("full", "tiny")


@dataclass
class RunConfig:
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{i}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{i}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{i}: duplicate key {key!r}")
        try:
            out[key] = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            out[key] = val
    return out


def build_config(values: dict) -> RunConfig:
    values = dict(values)
    preset = values.pop("preset", "tiny")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")
    model_base = ModelConfig() if preset == "full" else ModelConfig.tiny()

    groups = {"audio": {}, "model": {}, "optimizer": {}, "train": {}, "loss": {}}
    owners = [("audio", _names(AudioConfig)), ("model", _names(ModelConfig)),
              ("optimizer", _names(OptimizerConfig)), ("train", _names(TrainConfig))]
    for key, val in values.items():
        if key.startswith("w_") and key[2:] in _names(LossWeights):
            groups["loss"][key[2:]] = val
            continue
        for group, names in owners:
            if key in names:
                groups[group][key] = val
                break
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if "conv_kernels" in groups["model"]:
        groups["model"]["conv_kernels"] = tuple(groups["model"]["conv_kernels"])
    try:
        model = replace(model_base, **groups["model"])
        opt = groups["optimizer"]
        opt.setdefault("d_model", model.hidden)
        return RunConfig(
            audio=AudioConfig(**groups["audio"]),
            model=model,
            optimizer=OptimizerConfig(**opt),
            train=TrainConfig(**groups["train"]),
            loss=LossWeights(**groups["loss"]),
        )
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        values = parse_config_text(text, str(path))
    values.update(overrides or {})
    return build_config(values)
