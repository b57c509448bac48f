"""Synthetic data for the three Monte Carlo settings.

Responses follow the Pareto-type law with survival function

    1 - F(y) = (1 + delta) y^(-1/gamma) / (1 + delta y^(-1/gamma)),   y >= 1,

where ``delta >= 0`` controls the second-order deviation from the pure Pareto
tail and ``gamma(x, t) = exp(-z' theta(t))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from common.errors import InvalidConfig
from common.models import Dataset
from estimation.kernels import KernelFamily

T_LOW, T_HIGH = -0.2, 1.2
X_CORRELATION = 0.5


def sample_response(
    gamma: np.ndarray | float, delta: float, u: np.ndarray | float
) -> np.ndarray | float:
    """Inverse of the survival function at tail probability ``u``."""

    u = np.asarray(u, dtype=float)
    y = (u / (1.0 + delta - u * delta)) ** (-np.asarray(gamma, dtype=float))
    return float(y) if np.ndim(y) == 0 else y


def survival(y: np.ndarray | float, gamma: np.ndarray | float, delta: float) -> np.ndarray | float:
    power = np.asarray(y, dtype=float) ** (-1.0 / np.asarray(gamma, dtype=float))
    value = (1.0 + delta) * power / (1.0 + delta * power)
    return float(value) if np.ndim(value) == 0 else value


def gen_x(n: int, p: int, rng: np.random.Generator, rho: float = X_CORRELATION) -> np.ndarray:
    """Uniform(-sqrt 3, sqrt 3) margins linked by a Gaussian copula with ``rho^|j1-j2|``."""

    if p < 1:
        raise InvalidConfig(f"p must be at least 1, got {p}")
    index = np.arange(p)
    covariance = rho ** np.abs(index[:, None] - index[None, :])
    factor = np.linalg.cholesky(covariance)
    z = rng.standard_normal((n, p)) @ factor.T
    return np.sqrt(12.0) * (stats.norm.cdf(z) - 0.5)


def gen_t(n: int, q: int, rng: np.random.Generator) -> np.ndarray:
    if q < 1:
        raise InvalidConfig(f"q must be at least 1, got {q}")
    return rng.uniform(T_LOW, T_HIGH, size=(n, q))


def _truth_setting1(t: np.ndarray) -> np.ndarray:
    m = t.shape[0]
    return np.column_stack([np.ones(m), np.cos(2.0 * t[:, 0]), np.zeros(m)])


def _truth_setting2(t: np.ndarray) -> np.ndarray:
    m = t.shape[0]
    return np.column_stack([np.ones(m), np.cos(2.0 * t[:, 0]), np.zeros((m, 8))])


def _truth_setting3(t: np.ndarray) -> np.ndarray:
    m = t.shape[0]
    bump = -np.exp(-10.0 * np.sum((t - 0.5) ** 2, axis=1))
    return np.column_stack([np.full(m, 2.0), bump, np.zeros(m)])


@dataclass(frozen=True)
class _Layout:
    p: int
    q: int
    with_intercept: bool
    kernel: KernelFamily
    folds: int
    truth: Callable[[np.ndarray], np.ndarray]


_LAYOUTS = {
    1: _Layout(3, 1, False, KernelFamily.EPANECHNIKOV_PRODUCT, 20, _truth_setting1),
    2: _Layout(10, 1, False, KernelFamily.EPANECHNIKOV_PRODUCT, 20, _truth_setting2),
    3: _Layout(2, 2, True, KernelFamily.EPANECHNIKOV_SPHERICAL, 50, _truth_setting3),
}


@dataclass(frozen=True)
class SimSetting:
    """One of the three simulation designs at a given ``delta`` and sample size."""

    setting_id: int = 1
    delta: float = 0.1
    n: int = 1000

    def __post_init__(self) -> None:
        if self.setting_id not in _LAYOUTS:
            raise InvalidConfig(f"unknown simulation setting {self.setting_id}")
        if self.delta < 0:
            raise InvalidConfig(f"delta must be non-negative, got {self.delta}")
        if self.n < 1:
            raise InvalidConfig(f"sample size must be positive, got {self.n}")

    @property
    def p(self) -> int:
        return _LAYOUTS[self.setting_id].p

    @property
    def q(self) -> int:
        return _LAYOUTS[self.setting_id].q

    @property
    def with_intercept(self) -> bool:
        return _LAYOUTS[self.setting_id].with_intercept

    @property
    def kernel_family(self) -> KernelFamily:
        return _LAYOUTS[self.setting_id].kernel

    @property
    def folds(self) -> int:
        return _LAYOUTS[self.setting_id].folds

    def coefficient_truth(self, t: np.ndarray) -> np.ndarray:
        """``(m, d)`` true coefficient values at the rows of ``t``."""

        points = np.asarray(t, dtype=float).reshape(-1, self.q)
        return _LAYOUTS[self.setting_id].truth(points)

    def gamma(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.p)
        z = np.column_stack([np.ones(x.shape[0]), x]) if self.with_intercept else x
        eta = np.einsum("ij,ij->i", z, self.coefficient_truth(t))
        return np.exp(-eta)


@dataclass(frozen=True, eq=False)
class SimulatedData:
    dataset: Dataset
    setting: SimSetting

    def truth(self, t: np.ndarray) -> np.ndarray:
        return self.setting.coefficient_truth(t)


def gen_dataset(setting: SimSetting, rng: np.random.Generator) -> SimulatedData:
    """Draw ``(Y, X, T)`` for ``setting``; T stays on its native scale."""

    x = gen_x(setting.n, setting.p, rng)
    t = gen_t(setting.n, setting.q, rng)
    # 1 - U lies in (0, 1], keeping every response finite
    u = 1.0 - rng.random(setting.n)
    y = sample_response(setting.gamma(x, t), setting.delta, u)
    return SimulatedData(dataset=Dataset(y=y, x=x, t=t), setting=setting)


__all__ = [
    "SimSetting",
    "SimulatedData",
    "T_HIGH",
    "T_LOW",
    "gen_dataset",
    "gen_t",
    "gen_x",
    "sample_response",
    "survival",
]
