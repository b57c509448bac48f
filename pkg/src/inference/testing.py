"""Sup-deviation tests for constant and zero coefficient functions.

For coefficient ``j`` and a null curve ``eta`` the statistic is

    T = a { nu^-1/2 max_t |sqrt(sigma(t)) (theta_j(t) - eta(t))| - d_n },   a = sqrt(-2 q log h)

where ``sigma(t)`` is the (j, j) entry of the local Gram matrix and the maximum
runs over the grid. Under the null ``T`` is asymptotically Gumbel with
``P(T <= s) = exp(-2 exp(-s))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from common.errors import (
    AllPointsFailed,
    BandwidthOutOfRange,
    DimensionMismatch,
    EmptyGrid,
    InvalidAlpha,
    InvalidConfig,
    ShapeMismatch,
    ZeroLocalInformation,
)
from common.models import Dataset, FitConfig, GridFit, coefficient_labels
from estimation.estimator import local_gram
from estimation.kernels import KernelSpec, XiVariant, nu, xi_determinant

logger = logging.getLogger(__name__)

MAX_FAILED_SHARE = 0.10


class NullKind(str, Enum):
    ZERO = "zero"
    CONSTANT = "constant"


@dataclass(frozen=True)
class TestOutcome:
    """Result of one sup-deviation test on one coefficient function."""

    __test__ = False

    coefficient_index: int
    label: str
    null_kind: NullKind
    constant: float
    statistic: float
    critical_low: float
    critical_high: float
    alpha: float
    p_value: float
    rejected: bool
    degenerate: bool = False
    points_used: int = 0
    grid: Optional[GridFit] = field(default=None, compare=False, repr=False)


def dn_constant(
    h: float,
    q: int,
    kernel: KernelSpec,
    xi_variant: XiVariant | str = XiVariant.ROSENBLATT,
) -> float:
    """Centering constant of the Gumbel limit of the maximal deviation."""

    if q < 1 or kernel.dimension != q:
        raise DimensionMismatch(f"d_n needs q >= 1 matching the kernel, got q={q}")
    if not 0 < h < 1:
        raise BandwidthOutOfRange(f"d_n is defined for 0 < h < 1, got h={h}")
    a = math.sqrt(-2.0 * q * math.log(h))
    det = xi_determinant(kernel, xi_variant)
    log_log_term = (q - 1) / 2.0 * math.log(math.log(1.0 / h)) if q > 1 else 0.0
    constant = (q / 2.0) * math.log(2.0 * q / math.pi) + 0.5 * math.log(det / (4.0 * q * math.pi))
    return a + (log_log_term + constant) / a


def critical_values(alpha: float) -> tuple[float, float]:
    """Lower and upper Gumbel critical values at level ``alpha``."""

    if not 0 < alpha < 1:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    low = -math.log(-0.5 * math.log(alpha / 2.0))
    high = -math.log(-0.5 * math.log(1.0 - alpha / 2.0))
    return low, high


def gumbel_cdf(s: float) -> float:
    return math.exp(-2.0 * math.exp(-s)) if s > -700 else 0.0


def gumbel_p_value(statistic: float) -> float:
    """``min(G(T), 1 - G(T))`` with ``G(s) = exp(-2 exp(-s))``."""

    g = gumbel_cdf(statistic)
    return min(g, 1.0 - g)


def sigma_hat(data: Dataset, t: Sequence[float], j: int, cfg: FitConfig) -> float:
    """Diagonal (j, j) entry of the local Gram matrix at ``t``."""

    return float(local_gram(data, t, cfg).matrix[j, j])


def grid_sigma_hat(data: Dataset, grid_fit: GridFit, cfg: Optional[FitConfig] = None) -> np.ndarray:
    """``(L, d)`` diagonals of the local Gram matrices over the grid."""

    cfg = cfg or grid_fit.config
    return np.vstack([np.diag(local_gram(data, point, cfg).matrix) for point in grid_fit.grid])


def _usable_points(grid_fit: GridFit, j: int) -> np.ndarray:
    if len(grid_fit) == 0:
        raise EmptyGrid("grid fit has no points")
    usable = grid_fit.ok & np.isfinite(grid_fit.coefficient(j))
    skipped = int((~usable).sum())
    if skipped:
        logger.warning(
            "Skipping %d of %d grid points with failed fits",
            skipped,
            len(grid_fit),
            extra={"coefficient": j},
        )
    if skipped > MAX_FAILED_SHARE * len(grid_fit) or not usable.any():
        raise AllPointsFailed(
            f"{skipped} of {len(grid_fit)} grid points failed; too few to test coefficient {j}"
        )
    return usable


def max_deviation(
    grid_fit: GridFit,
    eta_on_grid: Sequence[float] | np.ndarray,
    j: int,
    data: Dataset,
    cfg: Optional[FitConfig] = None,
    *,
    sigma: Optional[np.ndarray] = None,
) -> tuple[float, int]:
    """``max_t |sqrt(sigma(t)) (theta_j(t) - eta(t))|`` over usable grid points."""

    cfg = cfg or grid_fit.config
    eta = np.asarray(eta_on_grid, dtype=float).reshape(-1)
    if eta.shape[0] != len(grid_fit):
        raise ShapeMismatch(f"eta has {eta.shape[0]} values for {len(grid_fit)} grid points")
    usable = _usable_points(grid_fit, j)
    if sigma is None:
        diag = np.array(
            [sigma_hat(data, point, j, cfg) if ok else np.nan for point, ok in zip(grid_fit.grid, usable)]
        )
    else:
        diag = np.asarray(sigma, dtype=float)[:, j]
    deviation = np.sqrt(diag[usable]) * np.abs(grid_fit.coefficient(j)[usable] - eta[usable])
    return float(np.max(deviation)), int(usable.sum())


def _scaled_statistic(max_dev: float, cfg: FitConfig, xi_variant: XiVariant | str) -> float:
    q = cfg.kernel.dimension
    h = cfg.common_bandwidth
    dn = dn_constant(h, q, cfg.kernel, xi_variant)
    a = math.sqrt(-2.0 * q * math.log(h))
    return a * (max_dev / math.sqrt(nu(cfg.kernel)) - dn)


def test_statistic(
    grid_fit: GridFit,
    eta_on_grid: Sequence[float] | np.ndarray,
    j: int,
    data: Dataset,
    cfg: Optional[FitConfig] = None,
    *,
    sigma: Optional[np.ndarray] = None,
    xi_variant: XiVariant | str = XiVariant.ROSENBLATT,
) -> float:
    cfg = cfg or grid_fit.config
    max_dev, _ = max_deviation(grid_fit, eta_on_grid, j, data, cfg, sigma=sigma)
    return _scaled_statistic(max_dev, cfg, xi_variant)


def _outcome(
    data: Dataset,
    grid_fit: GridFit,
    j: int,
    cfg: FitConfig,
    alpha: float,
    null_kind: NullKind,
    constant: float,
    sigma: Optional[np.ndarray],
    xi_variant: XiVariant | str,
) -> TestOutcome:
    low, high = critical_values(alpha)
    eta = np.full(len(grid_fit), constant)
    max_dev, used = max_deviation(grid_fit, eta, j, data, cfg, sigma=sigma)
    statistic = _scaled_statistic(max_dev, cfg, xi_variant)
    degenerate = max_dev == 0.0
    if degenerate:
        logger.warning(
            "Coefficient %d matches its null curve exactly; statistic is degenerate", j,
        )
    labels = coefficient_labels(data.p, cfg.include_intercept)
    return TestOutcome(
        coefficient_index=j,
        label=labels[j] if j < len(labels) else f"theta{j}",
        null_kind=null_kind,
        constant=constant,
        statistic=statistic,
        critical_low=low,
        critical_high=high,
        alpha=alpha,
        p_value=gumbel_p_value(statistic),
        rejected=bool(statistic < low or statistic > high),
        degenerate=degenerate,
        points_used=used,
        grid=grid_fit,
    )


def test_zero(
    data: Dataset,
    grid_fit: GridFit,
    j: int,
    cfg: Optional[FitConfig] = None,
    alpha: float = 0.05,
    *,
    sigma: Optional[np.ndarray] = None,
    xi_variant: XiVariant | str = XiVariant.ROSENBLATT,
) -> TestOutcome:
    """Test ``theta_j(.) == 0``."""

    critical_values(alpha)
    cfg = cfg or grid_fit.config
    return _outcome(data, grid_fit, j, cfg, alpha, NullKind.ZERO, 0.0, sigma, xi_variant)


def test_constant(
    data: Dataset,
    grid_fit: GridFit,
    j: int,
    cfg: Optional[FitConfig] = None,
    alpha: float = 0.05,
    *,
    sigma: Optional[np.ndarray] = None,
    xi_variant: XiVariant | str = XiVariant.ROSENBLATT,
) -> TestOutcome:
    """Test ``theta_j(.) == C`` with ``C`` the grid average of the estimates."""

    critical_values(alpha)
    cfg = cfg or grid_fit.config
    values = grid_fit.coefficient(j)[grid_fit.ok]
    constant = float(np.nanmean(values)) if np.isfinite(values).any() else 0.0
    return _outcome(data, grid_fit, j, cfg, alpha, NullKind.CONSTANT, constant, sigma, xi_variant)


def test_all(
    data: Dataset,
    grid_fit: GridFit,
    alpha: float = 0.05,
    cfg: Optional[FitConfig] = None,
    *,
    xi_variant: XiVariant | str = XiVariant.ROSENBLATT,
) -> list[TestOutcome]:
    """Zero and constant tests for every estimated (non-fixed) coefficient."""

    critical_values(alpha)
    cfg = cfg or grid_fit.config
    sigma = grid_sigma_hat(data, grid_fit, cfg)
    fixed = {j for j, _ in cfg.fixed_coefficients}
    outcomes: list[TestOutcome] = []
    for j in range(cfg.n_coefficients(data.p)):
        if j in fixed:
            continue
        outcomes.append(test_zero(data, grid_fit, j, cfg, alpha, sigma=sigma, xi_variant=xi_variant))
        outcomes.append(
            test_constant(data, grid_fit, j, cfg, alpha, sigma=sigma, xi_variant=xi_variant)
        )
    return outcomes


def pointwise_ci(
    grid_fit: GridFit,
    j: int,
    data: Dataset,
    cfg: Optional[FitConfig] = None,
    level: float = 0.95,
    *,
    sigma: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``(L, 2)`` bias-ignoring normal intervals; rows of failed grid points are NaN."""

    if not 0 <= level < 1:
        raise InvalidConfig(f"confidence level must lie in [0, 1), got {level}")
    cfg = cfg or grid_fit.config
    z = float(stats.norm.ppf(1.0 - (1.0 - level) / 2.0))
    theta = grid_fit.coefficient(j)
    bounds = np.full((len(grid_fit), 2), np.nan)
    root_nu = math.sqrt(nu(cfg.kernel))
    for index, (point, ok) in enumerate(zip(grid_fit.grid, grid_fit.ok)):
        if not ok:
            continue
        s = float(sigma[index, j]) if sigma is not None else sigma_hat(data, point, j, cfg)
        if not s > 0:
            raise ZeroLocalInformation(f"sigma_hat is zero at t={tuple(point)}")
        half_width = z * root_nu / math.sqrt(s)
        bounds[index] = (theta[index] - half_width, theta[index] + half_width)
    return bounds


__all__ = [
    "MAX_FAILED_SHARE",
    "NullKind",
    "TestOutcome",
    "critical_values",
    "dn_constant",
    "grid_sigma_hat",
    "gumbel_cdf",
    "gumbel_p_value",
    "max_deviation",
    "pointwise_ci",
    "sigma_hat",
    "test_all",
    "test_constant",
    "test_statistic",
    "test_zero",
]
