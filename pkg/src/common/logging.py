"""Logging setup for command-line runs.

Modules log through ``logging.getLogger(__name__)`` and pass run context with
``extra={...}``; :class:`ContextFormatter` appends that context to each line.
"""

from __future__ import annotations

import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Mapping, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import InvalidConfig

DEFAULT_LOG_PATH = Path("logs/tailreg.log")
LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Attributes every LogRecord carries; anything else arrived through ``extra=``.
_RECORD_FIELDS = frozenset(
    logging.LogRecord("", logging.INFO, "", 0, "", None, None).__dict__
) | {"message", "asctime", "taskName"}


class LogSettings(BaseModel):
    """The ``logging`` section of ``config.yaml``."""

    level: int = Field(default=logging.INFO, description="Root level, by name or number")
    file: Optional[Path] = Field(
        default=DEFAULT_LOG_PATH, description="Rotating log file; null for console only"
    )
    max_bytes: int = Field(default=2_000_000, gt=0)
    backup_count: int = Field(default=5, ge=0)

    @field_validator("level", mode="before")
    @classmethod
    def _level_by_name(cls, value: Any) -> Any:
        if isinstance(value, str) and not value.strip().isdigit():
            resolved = logging.getLevelName(value.strip().upper())
            if not isinstance(resolved, int):
                raise ValueError(f"unknown log level {value!r}")
            return resolved
        return value


class ContextFormatter(logging.Formatter):
    """Standard line format followed by ``key=value`` pairs from ``extra=``."""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        context = {
            key: value for key, value in record.__dict__.items() if key not in _RECORD_FIELDS
        }
        if not context:
            return line
        return line + " | " + " ".join(f"{key}={value}" for key, value in sorted(context.items()))


def settings_from_config(config: Mapping[str, Any]) -> LogSettings:
    section = config.get("logging")
    if section is None:
        return LogSettings()
    if not isinstance(section, Mapping):
        raise InvalidConfig(f"'logging' must be a mapping, got {type(section).__name__}")
    try:
        return LogSettings.model_validate(dict(section))
    except ValidationError as exc:
        raise InvalidConfig(str(exc)) from exc


def _has_own_handlers(root: logging.Logger) -> bool:
    return any(getattr(handler, "_tailreg", False) for handler in root.handlers)


def setup_logging(settings: Optional[LogSettings] = None) -> list[logging.Handler]:
    """Attach console and rotating file handlers to the root logger once.

    Returns the handlers added by this call (empty when already configured).
    """

    settings = settings or LogSettings()
    root = logging.getLogger()
    root.setLevel(settings.level)
    if _has_own_handlers(root):
        return []

    formatter = ContextFormatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if settings.file is not None:
        settings.file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(
            RotatingFileHandler(
                settings.file, maxBytes=settings.max_bytes, backupCount=settings.backup_count
            )
        )
    for handler in handlers:
        handler.setFormatter(formatter)
        handler._tailreg = True  # type: ignore[attr-defined]
        root.addHandler(handler)

    root.debug("Logging configured", extra={"log_file": str(settings.file)})
    return handlers


__all__ = [
    "ContextFormatter",
    "DEFAULT_LOG_PATH",
    "LogSettings",
    "settings_from_config",
    "setup_logging",
]
