"""Shared data models for the tail index regression toolkit.

Everything in this module is immutable after construction so fits, grids and
datasets can be handed to parallel workers without copying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import (
    DataError,
    DegenerateCoordinate,
    DimensionMismatch,
    EmptyDataset,
    InvalidConfig,
    NonPositiveResponse,
)

if TYPE_CHECKING:  # pragma: no cover - import cycle guard
    from estimation.kernels import KernelSpec


class Observation(BaseModel):
    """One row of the regression sample: response, linear and smoothing covariates."""

    model_config = ConfigDict(frozen=True)

    y: float = Field(..., description="Response; must be finite and strictly positive")
    x: tuple[float, ...] = Field(default=(), description="Linear covariates (length p)")
    t: tuple[float, ...] = Field(default=(), description="Smoothing covariates (length q)")

    @field_validator("y")
    @classmethod
    def _positive_response(cls, value: float) -> float:
        if not (math.isfinite(value) and value > 0):
            raise ValueError(f"response must be finite and > 0, got {value!r}")
        return value

    @field_validator("x", "t")
    @classmethod
    def _finite_covariates(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"covariates must be finite, got {values!r}")
        return values


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _as_columns(values: object, n: int) -> np.ndarray:
    if values is None:
        return np.empty((n, 0))
    array = np.array(values, dtype=float)
    if array.ndim == 2:
        return array
    if array.size == 0:
        return np.empty((n, 0))
    if array.ndim == 1 and n > 0 and array.size == n:
        return array.reshape(n, 1)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented regression sample ``{(Y_i, X_i, T_i)}``.

    ``x`` has shape ``(n, p)`` and ``t`` shape ``(n, q)``; either dimension may be 0.
    """

    y: np.ndarray
    x: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None
    x_names: tuple[str, ...] = ()
    t_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        x = _as_columns(self.x, n)
        t = _as_columns(self.t, n)
        if x.ndim != 2 or t.ndim != 2 or x.shape[0] != n or t.shape[0] != n:
            raise DimensionMismatch(
                f"x {x.shape} and t {t.shape} must have one row per response (n={n})"
            )
        x_names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        t_names = tuple(self.t_names) or tuple(f"t{k + 1}" for k in range(t.shape[1]))
        if len(x_names) != x.shape[1] or len(t_names) != t.shape[1]:
            raise DimensionMismatch("column names do not match covariate dimensions")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "t_names", t_names)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.x.shape[1])

    @property
    def q(self) -> int:
        return int(self.t.shape[1])

    @classmethod
    def from_observations(cls, observations: Iterable[Observation]) -> "Dataset":
        rows = list(observations)
        if not rows:
            raise EmptyDataset("dataset has no observations")
        p = len(rows[0].x)
        q = len(rows[0].t)
        for index, row in enumerate(rows):
            if len(row.x) != p or len(row.t) != q:
                raise DimensionMismatch(
                    f"observation {index} has (p, q)=({len(row.x)}, {len(row.t)}), "
                    f"expected ({p}, {q})"
                )
        return cls(
            y=np.array([row.y for row in rows], dtype=float),
            x=np.array([row.x for row in rows], dtype=float).reshape(len(rows), p),
            t=np.array([row.t for row in rows], dtype=float).reshape(len(rows), q),
        )

    def observations(self) -> tuple[Observation, ...]:
        return tuple(
            Observation(y=float(y), x=tuple(map(float, x)), t=tuple(map(float, t)))
            for y, x, t in zip(self.y, self.x, self.t)
        )

    def design(self, include_intercept: bool) -> np.ndarray:
        """Design rows ``z_i = (1, x_i)`` (or ``x_i`` without intercept)."""

        if include_intercept:
            return np.column_stack([np.ones(self.n), self.x])
        return np.array(self.x)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            y=self.y[idx],
            x=self.x[idx],
            t=self.t[idx],
            x_names=self.x_names,
            t_names=self.t_names,
        )

    def select_x(self, columns: Sequence[int]) -> "Dataset":
        """Keep only the listed x-columns (a covariate-dropped reduced model)."""

        cols = [int(c) for c in columns]
        return Dataset(
            y=self.y,
            x=self.x[:, cols],
            t=self.t,
            x_names=tuple(self.x_names[c] for c in cols),
            t_names=self.t_names,
        )

    def as_linear(self) -> "Dataset":
        """Move the t columns into x, giving the q=0 linear tail index regression."""

        return Dataset(
            y=self.y,
            x=np.column_stack([self.x, self.t]),
            t=np.empty((self.n, 0)),
            x_names=self.x_names + self.t_names,
        )

    def with_t(self, t: np.ndarray) -> "Dataset":
        return Dataset(y=self.y, x=self.x, t=t, x_names=self.x_names, t_names=self.t_names)


def validate_dataset(raw: Dataset | Iterable[Observation]) -> Dataset:
    """Return ``raw`` as a dataset after checking the model's invariants."""

    dataset = raw if isinstance(raw, Dataset) else Dataset.from_observations(raw)
    if dataset.n < 1:
        raise EmptyDataset("dataset has no observations")
    bad = ~np.isfinite(dataset.y) | (dataset.y <= 0)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise NonPositiveResponse(
            f"response must be finite and > 0; row {first} has y={dataset.y[first]!r}"
        )
    if not np.isfinite(dataset.x).all() or not np.isfinite(dataset.t).all():
        raise DataError("covariates contain non-finite entries")
    return dataset


@dataclass(frozen=True)
class AffineMap:
    """``t -> (t - low) / (high - low)`` for one smoothing coordinate."""

    low: float
    high: float

    @property
    def scale(self) -> float:
        return self.high - self.low

    def forward(self, values: np.ndarray | float) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.low) / self.scale

    def inverse(self, values: np.ndarray | float) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.scale + self.low


def rescale_t_to_unit_cube(dataset: Dataset) -> tuple[Dataset, tuple[AffineMap, ...]]:
    """Map every t-coordinate onto [0, 1] by its sample min and max."""

    maps: list[AffineMap] = []
    for k in range(dataset.q):
        column = dataset.t[:, k]
        low, high = float(column.min()), float(column.max())
        if not high > low:
            raise DegenerateCoordinate(
                f"t-coordinate {dataset.t_names[k]!r} has zero sample range"
            )
        maps.append(AffineMap(low, high))
    if not maps:
        return dataset, ()
    rescaled = np.column_stack([m.forward(dataset.t[:, k]) for k, m in enumerate(maps)])
    return dataset.with_t(rescaled), tuple(maps)


@dataclass(frozen=True)
class SolverOptions:
    """Newton solver controls."""

    gradient_tol: float = 1e-8
    max_iter: int = 100
    max_halvings: int = 30
    ridge: float = 1e-8


@dataclass(frozen=True)
class FitConfig:
    """Everything the weighted likelihood needs besides the data."""

    kernel: "KernelSpec"
    bandwidths: tuple[float, ...]
    threshold: float
    include_intercept: bool = True
    fixed_coefficients: tuple[tuple[int, float], ...] = ()
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        bandwidths = tuple(float(h) for h in self.bandwidths)
        if len(bandwidths) != self.kernel.dimension:
            raise DimensionMismatch(
                f"{len(bandwidths)} bandwidths given for a q={self.kernel.dimension} kernel"
            )
        if any(not (h > 0 and math.isfinite(h)) for h in bandwidths):
            raise InvalidConfig(f"bandwidths must be positive, got {bandwidths}")
        if not (self.threshold > 0 and math.isfinite(self.threshold)):
            raise InvalidConfig(f"threshold must be positive, got {self.threshold}")
        fixed = tuple(sorted((int(j), float(c)) for j, c in dict(self.fixed_coefficients).items()))
        object.__setattr__(self, "bandwidths", bandwidths)
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "fixed_coefficients", fixed)

    def n_coefficients(self, p: int) -> int:
        return p + 1 if self.include_intercept else p

    @property
    def common_bandwidth(self) -> float:
        """Geometric mean of the bandwidth diagonal."""

        if not self.bandwidths:
            return 1.0
        return float(np.exp(np.mean(np.log(self.bandwidths))))

    def with_(self, **changes: object) -> "FitConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class FitTemplate:
    """The parts of a ``FitConfig`` that tuning leaves alone."""

    kernel: "KernelSpec"
    include_intercept: bool = True
    fixed_coefficients: tuple[tuple[int, float], ...] = ()
    solver: SolverOptions = field(default_factory=SolverOptions)

    def config(self, bandwidths: Sequence[float] | float, threshold: float) -> FitConfig:
        if np.ndim(bandwidths) == 0:
            bandwidths = (float(bandwidths),) * self.kernel.dimension  # type: ignore[arg-type]
        return FitConfig(
            kernel=self.kernel,
            bandwidths=tuple(bandwidths),  # type: ignore[arg-type]
            threshold=threshold,
            include_intercept=self.include_intercept,
            fixed_coefficients=self.fixed_coefficients,
            solver=self.solver,
        )


def coefficient_labels(p: int, include_intercept: bool) -> tuple[str, ...]:
    """Names ``theta0..thetap`` with an intercept, ``theta1..thetap`` without."""

    start = 0 if include_intercept else 1
    return tuple(f"theta{j}" for j in range(start, p + 1))


@dataclass(frozen=True, eq=False)
class CoefficientFit:
    """Estimated coefficient vector at one location plus solver metadata."""

    location: tuple[float, ...]
    theta: np.ndarray
    local_exceedance_weight: float
    converged: bool
    iterations: int
    gradient_norm: float
    local_count: int = 0
    failure: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        object.__setattr__(self, "theta", _frozen(np.array(self.theta, dtype=float)))

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass(frozen=True, eq=False)
class GridFit:
    """Coefficient estimates over an equally spaced lattice in [0, 1]^q."""

    grid: np.ndarray
    fits: tuple[CoefficientFit, ...]
    config: FitConfig
    axis_points: int

    def __post_init__(self) -> None:
        if len(self.fits) < 2:
            raise DimensionMismatch("a grid fit needs at least two grid points")
        grid = _frozen(np.array(self.grid, dtype=float).reshape(len(self.fits), -1))
        if len(np.unique(grid, axis=0)) != len(grid):
            raise DimensionMismatch("grid points must be pairwise distinct")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "fits", tuple(self.fits))

    def __len__(self) -> int:
        return len(self.fits)

    @property
    def ok(self) -> np.ndarray:
        return np.array([fit.ok for fit in self.fits], dtype=bool)

    @property
    def thetas(self) -> np.ndarray:
        """``(L, d)`` estimates; rows of failed points are NaN."""

        return np.vstack([fit.theta for fit in self.fits])

    def coefficient(self, j: int) -> np.ndarray:
        return self.thetas[:, j]


__all__ = [
    "AffineMap",
    "CoefficientFit",
    "Dataset",
    "FitConfig",
    "FitTemplate",
    "GridFit",
    "Observation",
    "SolverOptions",
    "coefficient_labels",
    "rescale_t_to_unit_cube",
    "validate_dataset",
]
