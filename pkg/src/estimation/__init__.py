"""Kernels, the local likelihood estimator and tuning parameter selection."""

from .estimator import fit_at, fit_global, fit_grid, hill, local_gram, local_hill
from .kernels import KernelFamily, KernelSpec, XiVariant, kappa, nu, xi_matrix
from .tuning import DiscrepancyVariant, TuningResult, cv_bandwidth, select_threshold, tune

__all__ = [
    "DiscrepancyVariant",
    "KernelFamily",
    "KernelSpec",
    "TuningResult",
    "XiVariant",
    "cv_bandwidth",
    "fit_at",
    "fit_global",
    "fit_grid",
    "hill",
    "kappa",
    "local_gram",
    "local_hill",
    "nu",
    "select_threshold",
    "tune",
    "xi_matrix",
]
