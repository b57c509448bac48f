"""Coefficient tests, confidence intervals and goodness-of-fit diagnostics."""

from .diagnostics import QqData, compare_models, exponential_residuals, ks_statistic, qq_data
from .testing import NullKind, TestOutcome, critical_values, dn_constant, pointwise_ci, test_all

__all__ = [
    "NullKind",
    "QqData",
    "TestOutcome",
    "compare_models",
    "critical_values",
    "dn_constant",
    "exponential_residuals",
    "ks_statistic",
    "pointwise_ci",
    "qq_data",
    "test_all",
]
