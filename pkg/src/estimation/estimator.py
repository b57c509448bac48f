"""Local constant weighted maximum-likelihood estimation of coefficient functions.

For a location ``t0`` the estimator minimises

    L(theta) = sum_i {exp(z_i' theta) log(Y_i / w) - z_i' theta} I(Y_i > w) K(H^-1 (t0 - T_i))

with ``z_i = (1, X_i)`` (or ``X_i`` without intercept). The objective is convex,
so a damped Newton iteration with the analytic Hessian is used.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg
from scipy.interpolate import RegularGridInterpolator

from common.errors import (
    DataError,
    DimensionMismatch,
    EmptyGrid,
    InsufficientLocalData,
    NoExceedances,
    NoLocalExceedances,
    NumericalError,
    SingularHessian,
)
from common.models import CoefficientFit, Dataset, FitConfig, GridFit

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = {1: 101, 2: 11}


@dataclass(frozen=True, eq=False)
class LocalGram:
    """Unnormalised local Gram matrix ``sum_i z_i z_i' I(Y_i > w) K_i`` and ``sum_i I(Y_i > w) K_i``."""

    matrix: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class _LocalProblem:
    z: np.ndarray
    log_excess: np.ndarray
    weights: np.ndarray
    free: np.ndarray

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    def objective(self, theta: np.ndarray) -> float:
        eta = self.z @ theta
        # Trial steps may overflow; the caller rejects non-finite values.
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.sum(self.weights * (np.exp(eta) * self.log_excess - eta)))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        eta = self.z @ theta
        return self.z.T @ (self.weights * (np.exp(eta) * self.log_excess - 1.0))

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        eta = self.z @ theta
        scale = self.weights * np.exp(eta) * self.log_excess
        return (self.z * scale[:, None]).T @ self.z


def kernel_weights(data: Dataset, t0: Sequence[float], cfg: FitConfig) -> np.ndarray:
    """``I(Y_i > w) K(H^-1 (t0 - T_i))`` for every row of ``data``."""

    location = np.asarray(t0, dtype=float).reshape(-1)
    if location.shape[0] != data.q or cfg.kernel.dimension != data.q:
        raise DimensionMismatch(
            f"location of length {location.shape[0]} for q={data.q} data "
            f"and a q={cfg.kernel.dimension} kernel"
        )
    scaled = (location[None, :] - data.t) / np.asarray(cfg.bandwidths)[None, :]
    weights = np.asarray(cfg.kernel.eval(scaled), dtype=float).reshape(data.n)
    return np.where(data.y > cfg.threshold, weights, 0.0)


def _local_problem(data: Dataset, t0: Sequence[float], cfg: FitConfig) -> _LocalProblem:
    weights = kernel_weights(data, t0, cfg)
    active = weights > 0
    design = data.design(cfg.include_intercept)
    d = design.shape[1]
    free = np.ones(d, dtype=bool)
    for j, _ in cfg.fixed_coefficients:
        if not 0 <= j < d:
            raise DimensionMismatch(f"fixed coefficient index {j} outside 0..{d - 1}")
        free[j] = False
    return _LocalProblem(
        z=design[active],
        log_excess=np.log(data.y[active] / cfg.threshold),
        weights=weights[active],
        free=free,
    )


def _checked_theta(problem: _LocalProblem, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != problem.z.shape[1]:
        raise DimensionMismatch(f"theta has length {theta.shape[0]}, expected {problem.z.shape[1]}")
    if problem.size == 0:
        raise NoLocalExceedances("no exceedance carries positive kernel weight at this location")
    return theta


def objective(data: Dataset, theta: np.ndarray, t0: Sequence[float], cfg: FitConfig) -> float:
    problem = _local_problem(data, t0, cfg)
    return problem.objective(_checked_theta(problem, theta))


def gradient(data: Dataset, theta: np.ndarray, t0: Sequence[float], cfg: FitConfig) -> np.ndarray:
    problem = _local_problem(data, t0, cfg)
    return problem.gradient(_checked_theta(problem, theta))


def hessian(data: Dataset, theta: np.ndarray, t0: Sequence[float], cfg: FitConfig) -> np.ndarray:
    problem = _local_problem(data, t0, cfg)
    return problem.hessian(_checked_theta(problem, theta))


def hill(y_values: Sequence[float] | np.ndarray, omega: float) -> float:
    """Mean log-excess over ``omega``."""

    y = np.asarray(y_values, dtype=float)
    exceed = y[y > omega]
    if exceed.size == 0:
        raise NoExceedances(f"no response exceeds the threshold {omega}")
    return float(np.mean(np.log(exceed) - np.log(omega)))


def local_hill(data: Dataset, t0: Sequence[float], cfg: FitConfig) -> float:
    """Kernel-weighted Hill estimator, the closed form of the p=0 fit."""

    weights = kernel_weights(data, t0, cfg)
    total = float(weights.sum())
    if not total > 0:
        raise NoLocalExceedances("kernel-weighted exceedance count is zero")
    exceed = weights > 0
    log_excess = np.log(data.y[exceed] / cfg.threshold)
    return float(np.sum(weights[exceed] * log_excess) / total)


def local_gram(data: Dataset, t0: Sequence[float], cfg: FitConfig) -> LocalGram:
    weights = kernel_weights(data, t0, cfg)
    design = data.design(cfg.include_intercept)
    matrix = (design * weights[:, None]).T @ design
    return LocalGram(matrix=matrix, weight=float(weights.sum()))


def _initial_theta(problem: _LocalProblem, cfg: FitConfig, init: Optional[np.ndarray]) -> np.ndarray:
    d = problem.z.shape[1]
    if init is not None:
        theta = np.array(init, dtype=float).reshape(-1)
        if theta.shape[0] != d:
            raise DimensionMismatch(f"init has length {theta.shape[0]}, expected {d}")
        if not np.isfinite(theta).all():
            theta = np.zeros(d)
    else:
        theta = np.zeros(d)
        if cfg.include_intercept and problem.free[0]:
            mean_log_excess = np.sum(problem.weights * problem.log_excess) / problem.weights.sum()
            theta[0] = -np.log(mean_log_excess)
    for j, value in cfg.fixed_coefficients:
        theta[j] = value
    return theta


def _newton_direction(hess: np.ndarray, grad: np.ndarray, ridge: float) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(hess), grad)
    except (linalg.LinAlgError, ValueError):
        pass
    shift = ridge * max(float(np.trace(hess)), 1e-300) / hess.shape[0]
    try:
        return linalg.cho_solve(linalg.cho_factor(hess + shift * np.eye(hess.shape[0])), grad)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularHessian("local Hessian is singular even after ridge regularisation") from exc


def fit_at(
    data: Dataset,
    t0: Sequence[float],
    cfg: FitConfig,
    init: Optional[np.ndarray] = None,
) -> CoefficientFit:
    """Minimise the local weighted likelihood at ``t0`` by damped Newton steps."""

    problem = _local_problem(data, t0, cfg)
    n_free = int(problem.free.sum())
    if problem.size < n_free + 1:
        raise InsufficientLocalData(
            f"{problem.size} local exceedances at t={tuple(np.ravel(t0))}, need at least {n_free + 1}"
        )

    options = cfg.solver
    theta = _initial_theta(problem, cfg, init)
    free = problem.free
    value = problem.objective(theta)
    grad = problem.gradient(theta)[free]
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    iterations = 0
    converged = grad_norm <= options.gradient_tol

    while not converged and iterations < options.max_iter:
        step = _newton_direction(problem.hessian(theta)[np.ix_(free, free)], grad, options.ridge)
        scale = 1.0
        slack = 1e-12 * max(1.0, abs(value))
        for _ in range(options.max_halvings + 1):
            candidate = theta.copy()
            candidate[free] -= scale * step
            candidate_value = problem.objective(candidate)
            if np.isfinite(candidate_value) and candidate_value <= value + slack:
                break
            scale *= 0.5
        else:
            logger.debug("Line search exhausted at t=%s", tuple(np.ravel(t0)))
            break
        theta, value = candidate, candidate_value
        iterations += 1
        grad = problem.gradient(theta)[free]
        grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
        converged = grad_norm <= options.gradient_tol

    return CoefficientFit(
        location=tuple(np.ravel(t0)),
        theta=theta,
        local_exceedance_weight=float(problem.weights.sum()),
        converged=bool(converged),
        iterations=iterations,
        gradient_norm=grad_norm,
        local_count=problem.size,
    )


def fit_global(data: Dataset, cfg: FitConfig, init: Optional[np.ndarray] = None) -> CoefficientFit:
    """Unweighted fit for q=0 data (Hill when p=0, linear tail index regression otherwise)."""

    if data.q != 0:
        raise DimensionMismatch("fit_global expects q=0 data; use Dataset.as_linear()")
    return fit_at(data, (), cfg, init=init)


def failed_fit(location: Sequence[float], d: int, error: Exception) -> CoefficientFit:
    return CoefficientFit(
        location=tuple(np.ravel(location)),
        theta=np.full(d, np.nan),
        local_exceedance_weight=0.0,
        converged=False,
        iterations=0,
        gradient_norm=float("nan"),
        failure=getattr(error, "kind", type(error).__name__),
    )


def try_fit_at(
    data: Dataset, t0: Sequence[float], cfg: FitConfig, init: Optional[np.ndarray]
) -> CoefficientFit:
    try:
        return fit_at(data, t0, cfg, init=init)
    except (DataError, NumericalError) as exc:
        return failed_fit(t0, cfg.n_coefficients(data.p), exc)


def unit_grid(L: int, q: int) -> np.ndarray:
    """Full lattice of ``L`` equally spaced points per axis in [0, 1]^q."""

    if L < 2:
        raise EmptyGrid(f"grid size must be at least 2, got {L}")
    axis = np.linspace(0.0, 1.0, L)
    return np.array(list(itertools.product(axis, repeat=q)), dtype=float).reshape(-1, q)


def fit_grid(
    data: Dataset,
    L: Optional[int],
    cfg: FitConfig,
    *,
    n_jobs: int = 1,
) -> GridFit:
    """Fit at every lattice point; failed points are marked, not fatal.

    With ``n_jobs == 1`` each point is warm-started from the previous successful
    fit; parallel mode starts every point cold.
    """

    if data.q < 1:
        raise DimensionMismatch("grid fitting needs at least one smoothing covariate")
    size = L if L is not None else DEFAULT_GRID_SIZE.get(data.q, 11)
    grid = unit_grid(size, data.q)

    if n_jobs == 1:
        fits: list[CoefficientFit] = []
        previous: Optional[np.ndarray] = None
        for point in grid:
            fit = try_fit_at(data, point, cfg, previous)
            if fit.ok:
                previous = fit.theta
            fits.append(fit)
    else:
        fits = Parallel(n_jobs=n_jobs)(
            delayed(try_fit_at)(data, point, cfg, None) for point in grid
        )

    failed = [fit for fit in fits if not fit.ok]
    stalled = [fit for fit in fits if fit.ok and not fit.converged]
    if failed:
        logger.warning(
            "%d of %d grid points could not be fitted",
            len(failed),
            len(fits),
            extra={"failures": sorted({fit.failure for fit in failed})},
        )
    if stalled:
        logger.warning("%d grid points did not converge", len(stalled))
    return GridFit(grid=grid, fits=tuple(fits), config=cfg, axis_points=size)


def interpolate_grid(grid_fit: GridFit, locations: np.ndarray) -> np.ndarray:
    """Coefficient vectors at arbitrary ``locations`` from a grid fit.

    Linear interpolation along the grid for q=1 (ends held constant), regular-grid
    linear interpolation with extrapolation for q>=2. Rows touching failed grid
    points come back as NaN.
    """

    locations = np.asarray(locations, dtype=float).reshape(-1, grid_fit.grid.shape[1])
    thetas = grid_fit.thetas
    if grid_fit.grid.shape[1] == 1:
        ok = grid_fit.ok
        if not ok.any():
            return np.full((locations.shape[0], thetas.shape[1]), np.nan)
        axis = grid_fit.grid[ok, 0]
        return np.column_stack(
            [np.interp(locations[:, 0], axis, thetas[ok, j]) for j in range(thetas.shape[1])]
        )
    L = grid_fit.axis_points
    q = grid_fit.grid.shape[1]
    axes = tuple(np.linspace(0.0, 1.0, L) for _ in range(q))
    values = thetas.reshape((L,) * q + (thetas.shape[1],))
    interpolator = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=None)
    return interpolator(locations)


@dataclass(frozen=True, eq=False)
class ExceedancePredictions:
    """Linear predictors ``z_i' theta_hat(T_i)`` at the fitted exceedances."""

    index: np.ndarray
    eta: np.ndarray
    log_excess: np.ndarray
    failed: int


def predict_at_exceedances(
    data: Dataset,
    cfg: FitConfig,
    grid_fit: Optional[GridFit] = None,
) -> ExceedancePredictions:
    """Evaluate ``theta_hat`` at each exceedance's own ``T_i``.

    Without ``grid_fit`` every exceedance gets its own ``fit_at`` (warm-started
    along the first t-coordinate); otherwise the grid fit is interpolated.
    """

    index = np.flatnonzero(data.y > cfg.threshold)
    if index.size == 0:
        raise NoExceedances(f"no response exceeds the threshold {cfg.threshold}")
    design = data.design(cfg.include_intercept)
    d = design.shape[1]

    if grid_fit is not None:
        thetas = interpolate_grid(grid_fit, data.t[index])
    elif data.q == 0:
        fit = fit_at(data, (), cfg)
        thetas = np.tile(fit.theta, (index.size, 1))
    else:
        thetas = np.full((index.size, d), np.nan)
        order = np.argsort(data.t[index, 0], kind="stable")
        previous: Optional[np.ndarray] = None
        for position in order:
            fit = try_fit_at(data, data.t[index[position]], cfg, previous)
            if fit.ok:
                previous = fit.theta
                thetas[position] = fit.theta

    ok = np.isfinite(thetas).all(axis=1)
    if not ok.all():
        logger.warning("%d of %d exceedances could not be fitted", int((~ok).sum()), index.size)
    kept = index[ok]
    eta = np.einsum("ij,ij->i", design[kept], thetas[ok])
    return ExceedancePredictions(
        index=kept,
        eta=eta,
        log_excess=np.log(data.y[kept] / cfg.threshold),
        failed=int((~ok).sum()),
    )


__all__ = [
    "DEFAULT_GRID_SIZE",
    "ExceedancePredictions",
    "LocalGram",
    "failed_fit",
    "fit_at",
    "fit_global",
    "fit_grid",
    "gradient",
    "hessian",
    "hill",
    "interpolate_grid",
    "kernel_weights",
    "local_gram",
    "local_hill",
    "objective",
    "predict_at_exceedances",
    "try_fit_at",
    "unit_grid",
]
