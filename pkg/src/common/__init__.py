"""Common utilities shared across the tail regression packages."""

from .config import load_config, merge_overrides
from .errors import DataError, NumericalError, TailRegressionError, UsageError
from .logging import setup_logging
from .models import (
    CoefficientFit,
    Dataset,
    FitConfig,
    FitTemplate,
    GridFit,
    Observation,
    SolverOptions,
    validate_dataset,
)

__all__ = [
    "CoefficientFit",
    "DataError",
    "Dataset",
    "FitConfig",
    "FitTemplate",
    "GridFit",
    "NumericalError",
    "Observation",
    "SolverOptions",
    "TailRegressionError",
    "UsageError",
    "load_config",
    "merge_overrides",
    "setup_logging",
    "validate_dataset",
]
