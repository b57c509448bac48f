"""Goodness-of-fit diagnostics: exponential residuals, Q-Q data and model comparison."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from common.errors import DataError, EmptyInput, EmptyResiduals, NoExceedances, NumericalError
from common.models import Dataset, FitConfig, GridFit, coefficient_labels
from estimation.estimator import predict_at_exceedances
from estimation.kernels import KernelSpec
from estimation.tuning import DiscrepancyVariant, discrepancy_from_u

logger = logging.getLogger(__name__)

DEFAULT_ENVELOPE_REPS = 1000


class Reference(str, Enum):
    UNIFORM01 = "uniform01"
    EXP1 = "exp1"


def exceedance_residuals(
    data: Dataset, cfg: FitConfig, grid_fit: Optional[GridFit] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the fitted exceedances and their residuals, ordered by residual."""

    predictions = predict_at_exceedances(data, cfg, grid_fit)
    if predictions.eta.size == 0:
        raise NoExceedances("no exceedance could be fitted")
    residuals = np.exp(predictions.eta) * predictions.log_excess
    order = np.argsort(residuals, kind="stable")
    return predictions.index[order], residuals[order]


def exponential_residuals(
    data: Dataset, cfg: FitConfig, grid_fit: Optional[GridFit] = None
) -> np.ndarray:
    """Sorted ``e_i = exp(z_i' theta(T_i)) log(Y_i / w)``; approximately Exp(1) under the model."""

    return exceedance_residuals(data, cfg, grid_fit)[1]


@dataclass(frozen=True, eq=False)
class QqData:
    theoretical: np.ndarray
    empirical: np.ndarray
    envelope_low: Optional[np.ndarray] = None
    envelope_high: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.theoretical.shape[0])

    @property
    def outside_fraction(self) -> float:
        """Share of points outside the simulation envelope (NaN without one)."""

        if self.envelope_low is None or self.envelope_high is None:
            return float("nan")
        outside = (self.empirical < self.envelope_low) | (self.empirical > self.envelope_high)
        return float(np.mean(outside))


def qq_data(
    residuals: Sequence[float] | np.ndarray,
    envelope_reps: int = DEFAULT_ENVELOPE_REPS,
    rng: Optional[np.random.Generator] = None,
) -> QqData:
    """Exponential Q-Q coordinates with a pointwise 95% order-statistic envelope.

    Plotting positions are ``(l - 0.5) / n0``; ``envelope_reps = 0`` skips the envelope.
    """

    empirical = np.sort(np.asarray(residuals, dtype=float).reshape(-1))
    n0 = empirical.shape[0]
    if n0 == 0:
        raise EmptyResiduals("no residuals to plot")
    positions = (np.arange(1, n0 + 1) - 0.5) / n0
    theoretical = -np.log1p(-positions)
    if envelope_reps <= 0:
        return QqData(theoretical=theoretical, empirical=empirical)

    rng = rng or np.random.default_rng()
    simulated = np.sort(rng.standard_exponential((envelope_reps, n0)), axis=1)
    low, high = np.quantile(simulated, [0.025, 0.975], axis=0)
    return QqData(
        theoretical=theoretical,
        empirical=empirical,
        envelope_low=low,
        envelope_high=high,
    )


def ks_statistic(values: Sequence[float] | np.ndarray, reference: Reference | str) -> float:
    """Kolmogorov distance between the sample and Uniform(0, 1) or Exp(1)."""

    sample = np.asarray(values, dtype=float).reshape(-1)
    if sample.size == 0:
        raise EmptyInput("Kolmogorov distance of an empty sample")
    distribution = "uniform" if Reference(reference) is Reference.UNIFORM01 else "expon"
    return float(stats.kstest(sample, distribution).statistic)


def linear_counterpart(data: Dataset, cfg: FitConfig) -> tuple[Dataset, FitConfig]:
    """The global linear tail index regression with t moved into the design."""

    kernel = KernelSpec(cfg.kernel.family, 0)
    return data.as_linear(), cfg.with_(kernel=kernel, bandwidths=(), fixed_coefficients=())


@dataclass(frozen=True)
class ModelCandidate:
    name: str
    data: Dataset
    config: FitConfig


@dataclass(frozen=True)
class ModelComparison:
    name: str
    bandwidths: tuple[float, ...]
    threshold: float
    fraction: float
    exceedances: int
    discrepancy: float
    ks_exp: float


def reduced_candidates(
    data: Dataset,
    cfg: FitConfig,
    j: int,
    constant: Optional[float] = None,
) -> list[ModelCandidate]:
    """Full model, model without coefficient ``j``, ``j`` held constant, and the linear model."""

    labels = coefficient_labels(data.p, cfg.include_intercept)
    label = labels[j]
    candidates = [ModelCandidate("full", data, cfg)]
    column = j - 1 if cfg.include_intercept else j
    if column >= 0:
        keep = [c for c in range(data.p) if c != column]
        candidates.append(ModelCandidate(f"without {label}", data.select_x(keep), cfg))
    if constant is not None:
        candidates.append(
            ModelCandidate(
                f"{label} = {constant:.4g}",
                data,
                cfg.with_(fixed_coefficients=cfg.fixed_coefficients + ((j, constant),)),
            )
        )
    linear_data, linear_cfg = linear_counterpart(data, cfg)
    candidates.append(ModelCandidate("linear", linear_data, linear_cfg))
    return candidates


def compare_models(
    candidates: Sequence[ModelCandidate],
    variant: DiscrepancyVariant | str = DiscrepancyVariant.LITERAL,
) -> list[ModelComparison]:
    """Discrepancy (and KS distance of the residuals) for each candidate model."""

    if not candidates:
        raise EmptyInput("no models to compare")
    rows: list[ModelComparison] = []
    for candidate in candidates:
        data, cfg = candidate.data, candidate.config
        exceedances = int(np.sum(data.y > cfg.threshold))
        try:
            residuals = exponential_residuals(data, cfg)
            value = discrepancy_from_u(np.exp(-residuals), variant)
            ks = ks_statistic(residuals, Reference.EXP1)
        except (DataError, NumericalError) as exc:
            logger.warning("Model %r could not be evaluated: %s", candidate.name, exc)
            value = ks = math.nan
        rows.append(
            ModelComparison(
                name=candidate.name,
                bandwidths=cfg.bandwidths,
                threshold=cfg.threshold,
                fraction=exceedances / data.n,
                exceedances=exceedances,
                discrepancy=value,
                ks_exp=ks,
            )
        )
        logger.info("Model %r: discrepancy %.6g", candidate.name, value)
    return rows


__all__ = [
    "DEFAULT_ENVELOPE_REPS",
    "ModelCandidate",
    "ModelComparison",
    "QqData",
    "Reference",
    "compare_models",
    "exceedance_residuals",
    "exponential_residuals",
    "ks_statistic",
    "linear_counterpart",
    "qq_data",
    "reduced_candidates",
]
