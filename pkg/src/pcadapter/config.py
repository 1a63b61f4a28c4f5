"""Training configuration and the flat key/value run-config files used by the CLI."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .geometry import InvalidConfigError

METHODS = ("pc_adapter", "source_only", "maxconf_pl")
COMBINE_MODES = ("sum", "average")
R0_CHOICES = (0.1, 10, 15, 20, 30, 40, 45)


@dataclass
class TrainConfig:
    method: str = "pc_adapter"
    fps_ratio: float = 0.1
    fps_seed_index: int = 0
    k: int = 5
    r0: float = 0.1
    gamma: float = 0.9
    maxconf_gamma: float = 0.9
    rho: float = 0.2
    base_lr: float = 0.001
    weight_decay: float = 0.00005
    epochs: int = 40
    lambda_centroid: float = 0.1
    combine: str = "sum"
    batch_size: int = 16
    hidden: int = 32
    feat_dim: int = 64
    locality_init: str = "glorot"
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.method not in METHODS:
            raise InvalidConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.combine not in COMBINE_MODES:
            raise InvalidConfigError(f"combine must be one of {COMBINE_MODES}, got {self.combine!r}")
        if self.locality_init not in ("zeros", "glorot"):
            raise InvalidConfigError(f"locality_init must be 'zeros' or 'glorot', got {self.locality_init!r}")
        if not 0.0 < self.fps_ratio <= 1.0:
            raise InvalidConfigError(f"fps_ratio must be in (0, 1], got {self.fps_ratio}")
        if not 0.0 < self.rho <= 1.0:
            raise InvalidConfigError(f"rho must be in (0, 1], got {self.rho}")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 <= self.maxconf_gamma <= 1.0:
            raise InvalidConfigError(f"maxconf_gamma must be in [0, 1], got {self.maxconf_gamma}")
        for name in ("r0", "base_lr", "batch_size", "hidden", "feat_dim"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("k", "epochs", "weight_decay", "lambda_centroid", "fps_seed_index"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()


def coerce(value: str, like: Any, key: str):
    """Parse a string to the type of ``like``."""
    try:
        if isinstance(like, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            return tuple(float(v) for v in value.split(","))
    except ValueError:
        raise InvalidConfigError(f"{key}: cannot parse {value!r}") from None
    return value


def train_config_from(values: dict[str, str]) -> TrainConfig:
    base = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise InvalidConfigError(f"unknown train key {key!r}")
        kwargs[key] = coerce(raw, getattr(base, key), key)
    return TrainConfig(**kwargs).validate()


def read_run_config(path: str | Path | None, section: str) -> dict[str, str]:
    """Key/value pairs of one ``[section]`` of an INI-style file (empty if path is None)."""
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    if not parser.read(path):
        raise InvalidConfigError(f"cannot read config file {path}")
    for name in parser.sections():
        if name not in SECTIONS:
            raise InvalidConfigError(f"{path}: unknown section [{name}]")
    return dict(parser[section]) if parser.has_section(section) else {}


def write_run_config(path: str | Path, section: str, values: dict[str, Any]) -> None:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    parser[section] = {k: format_value(v) for k, v in values.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def format_value(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return str(v)


SECTIONS = ("gen-data", "train", "eval", "ablate-fps", "analyze-pl")
