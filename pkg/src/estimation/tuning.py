"""Bandwidth selection by D-fold cross-validation and threshold selection by discrepancy.

Tuning runs in two steps: bandwidths are chosen by cross-validating the local
likelihood at a pre-determined threshold ``omega0``, then the threshold is chosen
among candidate sample fractions by minimising a discrepancy between the
transformed residuals ``U_i = exp{-exp(z_i' theta(T_i)) log(Y_i / w)}`` and the
uniform distribution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from common.errors import (
    AllCandidatesFailed,
    DataError,
    InvalidConfig,
    NoExceedances,
    NumericalError,
)
from common.models import Dataset, FitConfig, FitTemplate, GridFit

from .estimator import predict_at_exceedances, try_fit_at

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.30, 0.25, 0.20, 0.15, 0.10, 0.05, 0.03)
DEFAULT_BANDWIDTHS = (0.1, 0.2, 0.3, 0.4, 0.5)
MIN_FITTED_SHARE = 0.5


class DiscrepancyVariant(str, Enum):
    """``literal`` compares U_(l) with the empirical CDF of the U's at l/n0;
    ``cvm`` compares U_(l) with l/n0 directly."""

    LITERAL = "literal"
    CVM = "cvm"


@dataclass(frozen=True)
class CvScore:
    bandwidths: tuple[float, ...]
    score: float
    fitted: int
    failed: int

    @property
    def usable(self) -> bool:
        return math.isfinite(self.score)


@dataclass(frozen=True)
class DmScore:
    threshold: float
    fraction: float
    exceedances: int
    discrepancy: float

    @property
    def usable(self) -> bool:
        return math.isfinite(self.discrepancy)


@dataclass(frozen=True)
class TuningResult:
    """Selected bandwidths and/or threshold together with the full score tables."""

    bandwidths: Optional[tuple[float, ...]] = None
    threshold: Optional[float] = None
    fraction: Optional[float] = None
    cv_table: tuple[CvScore, ...] = field(default_factory=tuple)
    dm_table: tuple[DmScore, ...] = field(default_factory=tuple)

    def merge(self, other: "TuningResult") -> "TuningResult":
        return TuningResult(
            bandwidths=other.bandwidths if other.bandwidths is not None else self.bandwidths,
            threshold=other.threshold if other.threshold is not None else self.threshold,
            fraction=other.fraction if other.fraction is not None else self.fraction,
            cv_table=self.cv_table + other.cv_table,
            dm_table=self.dm_table + other.dm_table,
        )


def threshold_for_fraction(y: Sequence[float] | np.ndarray, fraction: float) -> float:
    """Threshold leaving roughly ``fraction * n`` responses above it.

    The threshold is the (k+1)-th largest response with ``k = round(fraction * n)``,
    clipped to ``1 <= k <= n - 1``.
    """

    if not 0 < fraction < 1:
        raise InvalidConfig(f"sample fraction must lie in (0, 1), got {fraction}")
    values = np.sort(np.asarray(y, dtype=float))
    n = values.shape[0]
    if n < 2:
        raise NoExceedances("need at least two responses to place a threshold")
    k = min(max(int(round(fraction * n)), 1), n - 1)
    return float(values[n - k - 1])


def _bandwidth_vector(candidate: float | Sequence[float], q: int) -> tuple[float, ...]:
    if np.ndim(candidate) == 0:
        return (float(candidate),) * q  # type: ignore[arg-type]
    return tuple(float(h) for h in candidate)  # type: ignore[union-attr]


def fold_assignment(n: int, folds: int, seed: int | np.random.SeedSequence | None) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into ``folds`` contiguous blocks."""

    if folds < 2:
        raise InvalidConfig(f"cross-validation needs at least 2 folds, got {folds}")
    if n < folds:
        raise InvalidConfig(f"{folds} folds requested for only {n} observations")
    rng = np.random.default_rng(seed)
    return np.array_split(rng.permutation(n), folds)


def _held_out_losses(
    data: Dataset, cfg: FitConfig, held_out: np.ndarray
) -> tuple[float, int, int]:
    """Loss of the training fit at each held-out exceedance (sum, fitted, failed)."""

    mask = np.zeros(data.n, dtype=bool)
    mask[held_out] = True
    train = data.subset(np.flatnonzero(~mask))
    targets = held_out[data.y[held_out] > cfg.threshold]
    if targets.size == 0:
        return 0.0, 0, 0
    design = data.design(cfg.include_intercept)
    order = targets[np.argsort(data.t[targets, 0], kind="stable")] if data.q else targets

    total = 0.0
    fitted = failed = 0
    previous: Optional[np.ndarray] = None
    for i in order:
        fit = try_fit_at(train, data.t[i], cfg, previous)
        if not fit.ok:
            failed += 1
            continue
        previous = fit.theta
        eta = float(design[i] @ fit.theta)
        total += math.exp(eta) * math.log(data.y[i] / cfg.threshold) - eta
        fitted += 1
    return total, fitted, failed


def _cv_score(
    data: Dataset, cfg: FitConfig, folds: Sequence[np.ndarray]
) -> CvScore:
    total = 0.0
    fitted = failed = 0
    for held_out in folds:
        fold_total, fold_fitted, fold_failed = _held_out_losses(data, cfg, held_out)
        total += fold_total
        fitted += fold_fitted
        failed += fold_failed
    attempted = fitted + failed
    if fitted == 0 or fitted < MIN_FITTED_SHARE * attempted:
        score = float("nan")
    else:
        # failed held-out points are imputed with the mean loss of the fitted ones
        score = total * attempted / fitted
    return CvScore(bandwidths=cfg.bandwidths, score=score, fitted=fitted, failed=failed)


def _pick(scores: Sequence[float], tiebreak: Sequence[float]) -> int:
    """Index of the smallest finite score; ties go to the largest ``tiebreak``."""

    values = np.asarray(scores, dtype=float)
    usable = np.isfinite(values)
    best = float(values[usable].min())
    tol = 1e-12 * max(1.0, abs(best))
    tied = np.flatnonzero(usable & (values <= best + tol))
    return int(tied[np.argmax(np.asarray(tiebreak, dtype=float)[tied])])


def cv_bandwidth(
    data: Dataset,
    omega0: float,
    candidates: Sequence[float | Sequence[float]],
    folds: int,
    seed: int | np.random.SeedSequence | None,
    template: FitTemplate,
    *,
    n_jobs: int = 1,
) -> TuningResult:
    """Choose the bandwidth vector minimising the D-fold cross-validated loss."""

    if not candidates:
        raise InvalidConfig("no bandwidth candidates given")
    if not omega0 < float(np.max(data.y)):
        raise NoExceedances(f"pre-determined threshold {omega0} is not below max(Y)")
    blocks = fold_assignment(data.n, folds, seed)
    configs = [template.config(_bandwidth_vector(c, data.q), omega0) for c in candidates]

    if n_jobs == 1:
        table = [_cv_score(data, cfg, blocks) for cfg in configs]
    else:
        table = Parallel(n_jobs=n_jobs)(delayed(_cv_score)(data, cfg, blocks) for cfg in configs)

    for row in table:
        logger.debug(
            "CV score %.6g for bandwidths %s (%d fitted, %d failed)",
            row.score,
            row.bandwidths,
            row.fitted,
            row.failed,
        )
    if not any(row.usable for row in table):
        raise AllCandidatesFailed("every bandwidth candidate failed on too many held-out points")
    best = _pick(
        [row.score for row in table],
        [float(np.exp(np.mean(np.log(row.bandwidths)))) if row.bandwidths else 0.0 for row in table],
    )
    selected = table[best].bandwidths
    logger.info("Selected bandwidths %s by %d-fold cross-validation", selected, folds)
    return TuningResult(bandwidths=selected, cv_table=tuple(table))


def u_residuals(
    data: Dataset, cfg: FitConfig, grid_fit: Optional[GridFit] = None
) -> np.ndarray:
    """Sorted ``U_i = exp{-exp(z_i' theta(T_i)) log(Y_i / w)}`` over the exceedances."""

    predictions = predict_at_exceedances(data, cfg, grid_fit)
    if predictions.eta.size == 0:
        raise NoExceedances("no exceedance could be fitted")
    return np.sort(np.exp(-np.exp(predictions.eta) * predictions.log_excess))


def discrepancy_from_u(
    u_sorted: Sequence[float] | np.ndarray,
    variant: DiscrepancyVariant | str = DiscrepancyVariant.LITERAL,
) -> float:
    u = np.sort(np.asarray(u_sorted, dtype=float))
    n0 = u.shape[0]
    if n0 == 0:
        raise NoExceedances("discrepancy needs at least one residual")
    levels = np.arange(1, n0 + 1) / n0
    if DiscrepancyVariant(variant) is DiscrepancyVariant.LITERAL:
        reference = np.searchsorted(u, levels, side="right") / n0
    else:
        reference = levels
    return float(np.mean((u - reference) ** 2))


def discrepancy(
    data: Dataset,
    cfg: FitConfig,
    variant: DiscrepancyVariant | str = DiscrepancyVariant.LITERAL,
    grid_fit: Optional[GridFit] = None,
) -> float:
    return discrepancy_from_u(u_residuals(data, cfg, grid_fit), variant)


def _dm_score(
    data: Dataset,
    cfg: FitConfig,
    fraction: float,
    variant: DiscrepancyVariant,
) -> DmScore:
    exceedances = int(np.sum(data.y > cfg.threshold))
    d = cfg.n_coefficients(data.p)
    value = float("nan")
    if exceedances >= d + 1:
        try:
            value = discrepancy(data, cfg, variant)
        except (DataError, NumericalError) as exc:
            logger.debug("Threshold %.6g failed: %s", cfg.threshold, exc)
    return DmScore(
        threshold=cfg.threshold,
        fraction=fraction,
        exceedances=exceedances,
        discrepancy=value,
    )


def select_threshold(
    data: Dataset,
    bandwidths: Sequence[float] | float,
    omega_candidates: Sequence[float],
    template: FitTemplate,
    *,
    fractions: Optional[Sequence[float]] = None,
    variant: DiscrepancyVariant | str = DiscrepancyVariant.LITERAL,
    n_jobs: int = 1,
) -> TuningResult:
    """Choose the threshold with the smallest discrepancy at fixed bandwidths."""

    if not omega_candidates:
        raise InvalidConfig("no threshold candidates given")
    variant = DiscrepancyVariant(variant)
    if fractions is None:
        fractions = [float(np.mean(data.y > omega)) for omega in omega_candidates]
    configs = [template.config(bandwidths, float(omega)) for omega in omega_candidates]
    if n_jobs == 1:
        table = [_dm_score(data, cfg, f, variant) for cfg, f in zip(configs, fractions)]
    else:
        table = Parallel(n_jobs=n_jobs)(
            delayed(_dm_score)(data, cfg, f, variant) for cfg, f in zip(configs, fractions)
        )

    for row in table:
        logger.debug(
            "Discrepancy %.6g at threshold %.6g (%d exceedances)",
            row.discrepancy,
            row.threshold,
            row.exceedances,
        )
    if not any(row.usable for row in table):
        raise AllCandidatesFailed("no threshold candidate produced a discrepancy")
    best = table[_pick([row.discrepancy for row in table], [row.threshold for row in table])]
    logger.info(
        "Selected threshold %.6g (sample fraction %.3f) by discrepancy",
        best.threshold,
        best.fraction,
    )
    return TuningResult(threshold=best.threshold, fraction=best.fraction, dm_table=tuple(table))


def tune(
    data: Dataset,
    template: FitTemplate,
    *,
    fraction0: float = 0.2,
    bandwidth_candidates: Sequence[float | Sequence[float]] = DEFAULT_BANDWIDTHS,
    fraction_candidates: Sequence[float] = DEFAULT_FRACTIONS,
    folds: int = 20,
    seed: int | np.random.SeedSequence | None = None,
    variant: DiscrepancyVariant | str = DiscrepancyVariant.LITERAL,
    n_jobs: int = 1,
) -> TuningResult:
    """Cross-validate bandwidths at ``fraction0``, then pick the threshold."""

    omega0 = threshold_for_fraction(data.y, fraction0)
    cv = cv_bandwidth(data, omega0, bandwidth_candidates, folds, seed, template, n_jobs=n_jobs)
    assert cv.bandwidths is not None
    omegas = [threshold_for_fraction(data.y, f) for f in fraction_candidates]
    dm = select_threshold(
        data,
        cv.bandwidths,
        omegas,
        template,
        fractions=list(fraction_candidates),
        variant=variant,
        n_jobs=n_jobs,
    )
    return cv.merge(dm)


__all__ = [
    "DEFAULT_BANDWIDTHS",
    "DEFAULT_FRACTIONS",
    "CvScore",
    "DiscrepancyVariant",
    "DmScore",
    "TuningResult",
    "cv_bandwidth",
    "discrepancy",
    "discrepancy_from_u",
    "fold_assignment",
    "select_threshold",
    "threshold_for_fraction",
    "tune",
    "u_residuals",
]
