"""Command-line application: ingestion, run orchestration and reports."""

from .runtime import RunConfig, main, run

__all__ = ["RunConfig", "main", "run"]
