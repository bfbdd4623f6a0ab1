"""Flat `key = value` config files for model and training settings.

Dotted aliases are accepted for a few settings (`mixer.enabled`,
`mixup.alpha`, `epochs.per_stage`); CLI flags override file values.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .model import ModelConfig
from .trainer import TrainConfig

ALIASES = {
    "mixer.enabled": "mixer_enabled",
    "mixup.alpha": "mixup_alpha",
    "epochs.per_stage": "epochs_per_stage",
}

_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}


def parse_config_text(text: str) -> dict[str, str]:
    kv: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not `key = value`: {line!r}")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    return kv


def load_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def _parse_value(raw: str, pytype) -> object:
    if pytype is bool or pytype == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if pytype is float or pytype == "float":
        return float(raw)
    return int(raw)


def build_configs(kv: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    """Materialize configs from a flat key/value mapping; unknown keys error."""
    model = ModelConfig()
    train = TrainConfig()
    for key, raw in kv.items():
        name = ALIASES.get(key, key)
        if name in _MODEL_FIELDS:
            if name == "kernel_block_2d":
                value = tuple(int(p) for p in raw.replace("x", ",").split(","))
            elif name == "mixer_enabled":
                value = _parse_value(raw, bool)
            else:
                value = _parse_value(raw, int)
            setattr(model, name, value)
        elif name in _TRAIN_FIELDS:
            if name == "curriculum":
                value = _parse_value(raw, bool)
            elif name in ("base_lr", "lr_decay", "mixup_alpha"):
                value = _parse_value(raw, float)
            else:
                value = _parse_value(raw, int)
            setattr(train, name, value)
        else:
            raise ValueError(f"unknown config key: {key!r}")
    model.validate()
    return model, train
