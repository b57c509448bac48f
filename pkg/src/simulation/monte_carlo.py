"""Monte Carlo driver: generate, tune, fit on the grid and test, M times."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from common.errors import EmptyInput, InvalidConfig, ShapeMismatch, TailRegressionError
from common.models import FitTemplate, coefficient_labels
from estimation.estimator import DEFAULT_GRID_SIZE, fit_grid, unit_grid
from estimation.kernels import KernelSpec, XiVariant
from estimation.tuning import (
    DEFAULT_BANDWIDTHS,
    DEFAULT_FRACTIONS,
    DiscrepancyVariant,
    cv_bandwidth,
    select_threshold,
    threshold_for_fraction,
)
from inference.testing import NullKind, TestOutcome, test_all

from .generators import SimSetting, gen_dataset

logger = logging.getLogger(__name__)


def mse(estimates: np.ndarray, truth: Sequence[float] | np.ndarray) -> float:
    """``(1 / LM) sum_l sum_m (theta_m(t_l) - theta(t_l))^2``; NaN cells are skipped."""

    values = np.asarray(estimates, dtype=float)
    target = np.asarray(truth, dtype=float).reshape(-1)
    if values.ndim != 2 or values.shape[1] != target.shape[0]:
        raise ShapeMismatch(f"estimates {values.shape} do not match truth of length {target.shape[0]}")
    squared = (values - target[None, :]) ** 2
    finite = np.isfinite(squared)
    if not finite.any():
        return float("nan")
    return float(np.mean(squared[finite]))


def rejection_rate(outcomes: Sequence[TestOutcome]) -> float:
    if not outcomes:
        raise EmptyInput("rejection rate of no test outcomes")
    return sum(outcome.rejected for outcome in outcomes) / len(outcomes)


@dataclass(frozen=True)
class TuningPolicy:
    """How each replication picks bandwidth and threshold.

    ``bandwidth`` / ``fraction`` pin the respective step; otherwise it is tuned
    from the candidate grids.
    """

    fraction0: float = 0.2
    bandwidth_candidates: tuple[float, ...] = DEFAULT_BANDWIDTHS
    fraction_candidates: tuple[float, ...] = DEFAULT_FRACTIONS
    folds: Optional[int] = None
    bandwidth: Optional[float] = None
    fraction: Optional[float] = None
    variant: DiscrepancyVariant = DiscrepancyVariant.LITERAL
    alpha: float = 0.05
    grid_size: Optional[int] = None
    xi_variant: XiVariant = XiVariant.ROSENBLATT


@dataclass(frozen=True, eq=False)
class _Replication:
    index: int
    estimates: Optional[np.ndarray] = None
    outcomes: tuple[TestOutcome, ...] = ()
    bandwidths: tuple[float, ...] = ()
    fraction: float = float("nan")
    failure: Optional[str] = None


@dataclass(frozen=True, eq=False)
class McReport:
    """Per-coefficient MSE and rejection rates over the successful replications."""

    setting: SimSetting
    replications: int
    seed: Optional[int]
    labels: tuple[str, ...]
    grid: np.ndarray
    truth: np.ndarray
    mse: tuple[float, ...]
    rr_zero: tuple[float, ...]
    rr_constant: tuple[float, ...]
    mean_estimate: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    selected_bandwidths: tuple[tuple[float, ...], ...]
    selected_fractions: tuple[float, ...]
    failures: int = 0
    failure_kinds: tuple[str, ...] = field(default_factory=tuple)

    @property
    def succeeded(self) -> int:
        return self.replications - self.failures


def _replicate(
    index: int,
    setting: SimSetting,
    policy: TuningPolicy,
    seed_seq: np.random.SeedSequence,
    grid_size: int,
) -> _Replication:
    data_seq, cv_seq = seed_seq.spawn(2)
    data = gen_dataset(setting, np.random.default_rng(data_seq)).dataset
    template = FitTemplate(
        kernel=KernelSpec(setting.kernel_family, setting.q),
        include_intercept=setting.with_intercept,
    )
    try:
        if policy.bandwidth is not None:
            bandwidths: tuple[float, ...] = (float(policy.bandwidth),) * setting.q
        else:
            omega0 = threshold_for_fraction(data.y, policy.fraction0)
            cv = cv_bandwidth(
                data,
                omega0,
                policy.bandwidth_candidates,
                policy.folds or setting.folds,
                cv_seq,
                template,
            )
            assert cv.bandwidths is not None
            bandwidths = cv.bandwidths
        if policy.fraction is not None:
            fraction = float(policy.fraction)
            threshold = threshold_for_fraction(data.y, fraction)
        else:
            omegas = [threshold_for_fraction(data.y, f) for f in policy.fraction_candidates]
            dm = select_threshold(
                data,
                bandwidths,
                omegas,
                template,
                fractions=policy.fraction_candidates,
                variant=policy.variant,
            )
            assert dm.threshold is not None and dm.fraction is not None
            threshold, fraction = dm.threshold, dm.fraction

        cfg = template.config(bandwidths, threshold)
        grid_fit = fit_grid(data, grid_size, cfg)
        outcomes = test_all(data, grid_fit, policy.alpha, cfg, xi_variant=policy.xi_variant)
    except TailRegressionError as exc:
        logger.warning("Replication %d failed: %s", index, exc, extra={"kind": exc.kind})
        return _Replication(index=index, failure=exc.kind)
    return _Replication(
        index=index,
        estimates=grid_fit.thetas,
        outcomes=tuple(replace(o, grid=None) for o in outcomes),
        bandwidths=bandwidths,
        fraction=fraction,
    )


def _rates(outcomes: Sequence[TestOutcome]) -> float:
    return rejection_rate(outcomes) if outcomes else float("nan")


def run_monte_carlo(
    setting: SimSetting,
    M: int,
    policy: TuningPolicy = TuningPolicy(),
    seed: Optional[int] = None,
    *,
    n_jobs: int = 1,
) -> McReport:
    """Run ``M`` independent replications; each gets its own spawned seed."""

    if M < 1:
        raise InvalidConfig(f"number of replications must be positive, got {M}")
    grid_size = policy.grid_size or DEFAULT_GRID_SIZE.get(setting.q, 11)
    children = np.random.SeedSequence(seed).spawn(M)
    logger.info(
        "Running %d replications of setting %d (n=%d, delta=%.3g)",
        M,
        setting.setting_id,
        setting.n,
        setting.delta,
    )
    if n_jobs == 1:
        results = [_replicate(m, setting, policy, child, grid_size) for m, child in enumerate(children)]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_replicate)(m, setting, policy, child, grid_size)
            for m, child in enumerate(children)
        )

    grid = unit_grid(grid_size, setting.q)
    truth = setting.coefficient_truth(grid)
    d = truth.shape[1]
    done = [r for r in results if r.failure is None]
    failed = [r for r in results if r.failure is not None]
    if done:
        stacked = np.stack([r.estimates for r in done])
    else:
        stacked = np.full((1, grid.shape[0], d), np.nan)

    mse_values = tuple(mse(stacked[:, :, j], truth[:, j]) for j in range(d))
    rr_zero = []
    rr_constant = []
    for j in range(d):
        per_coefficient = [o for r in done for o in r.outcomes if o.coefficient_index == j]
        rr_zero.append(_rates([o for o in per_coefficient if o.null_kind is NullKind.ZERO]))
        rr_constant.append(_rates([o for o in per_coefficient if o.null_kind is NullKind.CONSTANT]))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_estimate = np.nanmean(stacked, axis=0) if done else stacked[0]
        band_low, band_high = (
            np.nanpercentile(stacked, [5.0, 95.0], axis=0) if done else (stacked[0], stacked[0])
        )
    if failed:
        logger.warning("%d of %d replications failed", len(failed), M)
    return McReport(
        setting=setting,
        replications=M,
        seed=seed,
        labels=coefficient_labels(setting.p, setting.with_intercept),
        grid=grid,
        truth=truth,
        mse=mse_values,
        rr_zero=tuple(rr_zero),
        rr_constant=tuple(rr_constant),
        mean_estimate=mean_estimate,
        band_low=band_low,
        band_high=band_high,
        selected_bandwidths=tuple(r.bandwidths for r in done),
        selected_fractions=tuple(r.fraction for r in done),
        failures=len(failed),
        failure_kinds=tuple(sorted({r.failure for r in failed if r.failure})),
    )


__all__ = [
    "McReport",
    "TuningPolicy",
    "mse",
    "rejection_rate",
    "run_monte_carlo",
]
