"""Configuration helpers for loading YAML files with environment expansion."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Mapping

import yaml
from dotenv import load_dotenv

from .errors import InvalidConfig


def load_config(path: str | os.PathLike[str], *, use_dotenv: bool = True) -> dict[str, Any]:
    """Load a YAML configuration file and expand environment variables.

    Args:
        path: Path to the YAML configuration file.
        use_dotenv: Populate the environment from a local ``.env`` first so that
            ``${VAR}`` references in the file can point at machine-specific paths.

    Returns:
        Parsed configuration dictionary. Returns an empty dict if the file is
        empty.
    """

    if use_dotenv:
        load_dotenv()
    config_path = Path(path)
    if not config_path.is_file():
        raise InvalidConfig(f"config file {str(config_path)!r} does not exist")
    raw_text = config_path.read_text()
    expanded = os.path.expandvars(raw_text)
    data = yaml.safe_load(expanded) or {}
    if not isinstance(data, Mapping):
        raise InvalidConfig(f"Config root must be a mapping, got {type(data)!r}")
    return dict(data)


def merge_overrides(
    base: Mapping[str, Any], overrides: Mapping[str, Any]
) -> dict[str, Any]:
    """Recursively overlay ``overrides`` on ``base``; ``None`` values are ignored."""

    merged: dict[str, Any] = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        current = merged.get(key)
        if isinstance(value, Mapping):
            merged[key] = merge_overrides(current if isinstance(current, Mapping) else {}, value)
        else:
            merged[key] = value
    return merged


__all__ = ["load_config", "merge_overrides"]
