"""Experiment config files: strict parsing, default resolution, and echo.

The on-disk format is JSON whose nested sections mirror ExperimentConfig
field names. Parsing is strict: any key that does not name a config field is
an error, so a typo cannot silently fall back to a default. A parsed config
is fully resolved; echoing it and parsing the echo reproduces the run
bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any

from .aggregation import AggregatorConfig
from .csft import CsftConfig
from .errors import ConfigurationError
from .model import ModelSpec, TrainConfig
from .orchestrator import (
    AttackConfig,
    DataConfig,
    ExperimentConfig,
    TriggerConfig,
    validate_config,
)

_SECTIONS: dict[str, type] = {
    "model": ModelSpec,
    "data": DataConfig,
    "trigger": TriggerConfig,
    "aggregator": AggregatorConfig,
    "attack": AttackConfig,
    "benign_train": TrainConfig,
    "malicious_train": TrainConfig,
    "csft": CsftConfig,
}


def _merge_section(cls: type, default: Any, payload: Any, path: str) -> Any:
    if not isinstance(payload, dict):
        raise ConfigurationError(f"{path}: expected an object, got {type(payload).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - names)
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {', '.join(unknown)}")
    if default is None:
        default = cls()
    try:
        return dataclasses.replace(default, **payload)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def config_from_dict(payload: dict) -> ExperimentConfig:
    """Resolve a (possibly partial) config mapping into a validated ExperimentConfig."""
    if not isinstance(payload, dict):
        raise ConfigurationError("config root must be an object")
    base = ExperimentConfig()
    field_names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(payload) - field_names)
    if unknown:
        raise ConfigurationError(f"config: unknown key(s) {', '.join(unknown)}")

    kwargs: dict[str, Any] = {}
    for name, value in payload.items():
        if name in _SECTIONS:
            if name == "csft" and value is None:
                kwargs[name] = None
            else:
                kwargs[name] = _merge_section(
                    _SECTIONS[name], getattr(base, name), value, name
                )
        else:
            kwargs[name] = value
    try:
        cfg = dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"config: {exc}") from exc
    validate_config(cfg)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    """Load, strictly validate, and fully resolve a config file.

    Raises:
        FileNotFoundError: no file at the path.
        ConfigurationError: malformed JSON, unknown keys, or violated
            constraints, each with a message naming the problem.
    """
    text = Path(path).read_text()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: malformed JSON ({exc})") from exc
    return config_from_dict(payload)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully-resolved plain mapping, suitable for JSON echo."""

    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(cfg)


def echo_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON text of the resolved config."""
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
