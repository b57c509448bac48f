from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from common.errors import EmptyGrid, InsufficientLocalData, NoExceedances, NoLocalExceedances
from common.models import Dataset, FitConfig
from estimation.estimator import (
    fit_at,
    fit_global,
    fit_grid,
    gradient,
    hessian,
    hill,
    interpolate_grid,
    kernel_weights,
    local_gram,
    local_hill,
    objective,
    predict_at_exceedances,
    unit_grid,
)
from estimation.kernels import KernelFamily, KernelSpec
from simulation.generators import SimSetting, gen_dataset

GLOBAL = KernelSpec(KernelFamily.EPANECHNIKOV_PRODUCT, 0)
LOCAL = KernelSpec(KernelFamily.EPANECHNIKOV_PRODUCT, 1)


def _pareto_data(n: int = 600, seed: int = 3) -> Dataset:
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, n)
    x = rng.uniform(-1.0, 1.0, n)
    gamma = np.exp(-(1.0 + 0.5 * x))
    y = (1.0 - rng.random(n)) ** (-gamma)
    return Dataset(y=y, x=x, t=t)


def test_objective_gradient_hessian_by_hand() -> None:
    data = Dataset(y=[math.e, 0.5], t=[0.5, 0.5])
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.2,), threshold=1.0)
    theta = np.zeros(1)

    assert objective(data, theta, [0.5], cfg) == pytest.approx(0.75)
    assert gradient(data, theta, [0.5], cfg) == pytest.approx([0.0])
    assert hessian(data, theta, [0.5], cfg) == pytest.approx([[0.75]])


def test_objective_without_local_exceedances() -> None:
    data = Dataset(y=[math.e, 0.5], t=[0.0, 0.5])
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.1,), threshold=1.0)

    assert kernel_weights(data, [0.9], cfg).tolist() == [0.0, 0.0]
    with pytest.raises(NoLocalExceedances):
        objective(data, np.zeros(1), [0.9], cfg)


def test_hill_and_global_fit() -> None:
    data = Dataset(y=[math.e, math.e**2, math.e**3])
    cfg = FitConfig(kernel=GLOBAL, bandwidths=(), threshold=1.0)

    fit = fit_global(data, cfg, init=np.zeros(1))

    assert hill(data.y, 1.0) == pytest.approx(2.0)
    assert fit.converged
    assert fit.iterations > 0
    assert fit.theta[0] == pytest.approx(-math.log(2.0), abs=1e-9)


def test_hill_without_exceedances() -> None:
    with pytest.raises(NoExceedances):
        hill([1.0, 2.0], 5.0)


def test_intercept_only_fit_is_local_hill() -> None:
    data = _pareto_data()
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.3,), threshold=float(np.quantile(data.y, 0.7)))
    reduced = Dataset(y=data.y, t=data.t)

    fit = fit_at(reduced, [0.4], cfg)

    assert fit.converged
    assert fit.gradient_norm <= 1e-8
    assert fit.theta[0] == pytest.approx(-math.log(local_hill(reduced, [0.4], cfg)), abs=1e-7)


def test_fixed_coefficient_offsets() -> None:
    rng = np.random.default_rng(11)
    x = rng.uniform(-1.0, 1.0, 40)
    y = np.exp(rng.standard_exponential(40))
    data = Dataset(y=y, x=x)
    cfg = FitConfig(
        kernel=GLOBAL,
        bandwidths=(),
        threshold=1.0,
        fixed_coefficients=((1, 0.5),),
    )

    fit = fit_global(data, cfg)

    log_excess = np.log(y)
    expected = math.log(y.size / np.sum(np.exp(0.5 * x) * log_excess))
    assert fit.theta[1] == 0.5
    assert fit.theta[0] == pytest.approx(expected, abs=1e-8)


def test_insufficient_local_data() -> None:
    data = Dataset(y=[3.0, 4.0, 0.5], x=[[0.1, 0.2], [0.3, 0.1], [0.2, 0.2]], t=[0.5, 0.5, 0.5])
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.2,), threshold=1.0)

    with pytest.raises(InsufficientLocalData):
        fit_at(data, [0.5], cfg)


def test_local_gram_intercept_entry_is_weight() -> None:
    data = _pareto_data(200)
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.25,), threshold=float(np.median(data.y)))

    gram = local_gram(data, [0.3], cfg)

    weights = kernel_weights(data, [0.3], cfg)
    assert gram.matrix[0, 0] == pytest.approx(gram.weight)
    assert gram.matrix[1, 1] == pytest.approx(float(np.sum(weights * data.x[:, 0] ** 2)))


def test_recovers_setting_one_coefficients() -> None:
    setting = SimSetting(setting_id=1, delta=0.0, n=4000)
    data = gen_dataset(setting, np.random.default_rng(2024)).dataset
    cfg = FitConfig(
        kernel=LOCAL,
        bandwidths=(0.2,),
        threshold=float(np.quantile(data.y, 0.8)),
        include_intercept=False,
    )

    fit = fit_at(data, [0.5], cfg)

    assert fit.converged
    np.testing.assert_allclose(fit.theta, setting.coefficient_truth(np.array([[0.5]]))[0], atol=0.3)


def test_unit_grid() -> None:
    assert unit_grid(5, 1)[:, 0].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert unit_grid(3, 2).shape == (9, 2)
    with pytest.raises(EmptyGrid):
        unit_grid(1, 1)


def test_fit_grid_serial_and_parallel_agree() -> None:
    data = _pareto_data()
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.3,), threshold=float(np.quantile(data.y, 0.7)))

    serial = fit_grid(data, 11, cfg)
    parallel = fit_grid(data, 11, cfg, n_jobs=2)

    assert len(serial) == 11
    assert serial.ok.all()
    np.testing.assert_allclose(serial.thetas, parallel.thetas, rtol=0, atol=1e-7)
    np.testing.assert_allclose(serial.coefficient(0), 1.0, atol=0.5)


def test_interpolate_grid_reproduces_grid_points() -> None:
    data = _pareto_data()
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.3,), threshold=float(np.quantile(data.y, 0.7)))
    grid_fit = fit_grid(data, 6, cfg)

    values = interpolate_grid(grid_fit, grid_fit.grid)
    midpoint = interpolate_grid(grid_fit, np.array([[0.1]]))

    np.testing.assert_allclose(values, grid_fit.thetas)
    np.testing.assert_allclose(midpoint[0], 0.5 * (grid_fit.thetas[0] + grid_fit.thetas[1]))


def test_predictions_at_exceedances_from_grid_and_pointwise() -> None:
    data = _pareto_data()
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.3,), threshold=float(np.quantile(data.y, 0.8)))

    pointwise = predict_at_exceedances(data, cfg)
    gridded = predict_at_exceedances(data, cfg, fit_grid(data, 41, cfg))

    assert pointwise.failed == 0
    assert pointwise.index.tolist() == np.flatnonzero(data.y > cfg.threshold).tolist()
    np.testing.assert_allclose(pointwise.eta, gridded.eta, atol=0.05)


def test_hill_on_exact_powers() -> None:
    assert hill(np.exp([1.0, 2.0, 3.0, 4.0]), 1.0) == pytest.approx(2.5, abs=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_intercept_only_global_fit_is_hill(seed: int) -> None:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 400))
    y = (1.0 - rng.random(n)) ** (-rng.uniform(0.2, 2.0))
    omega = float(np.quantile(y, rng.uniform(0.3, 0.9)))
    cfg = FitConfig(kernel=GLOBAL, bandwidths=(), threshold=omega)

    fit = fit_global(Dataset(y=y), cfg)

    assert fit.converged
    assert fit.theta[0] == pytest.approx(-math.log(hill(y, omega)), abs=1e-7)


def _random_instance(
    rng: np.random.Generator,
) -> tuple[Dataset, FitConfig, np.ndarray, list[float]]:
    n = 200
    data = Dataset(
        y=np.exp(rng.standard_exponential(n)), x=rng.normal(size=(n, 2)), t=rng.uniform(size=n)
    )
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.3,), threshold=float(np.median(data.y)))
    theta = rng.uniform(-1.0, 1.0, 3)
    t0 = [float(rng.uniform(0.2, 0.8))]
    return data, cfg, theta, t0


def test_gradient_and_hessian_match_central_differences() -> None:
    rng = np.random.default_rng(123)
    step = 1e-5
    for _ in range(100):
        data, cfg, theta, t0 = _random_instance(rng)
        grad = gradient(data, theta, t0, cfg)
        hess = hessian(data, theta, t0, cfg)
        basis = np.eye(theta.size) * step

        fd_grad = np.array(
            [
                (objective(data, theta + e, t0, cfg) - objective(data, theta - e, t0, cfg))
                / (2 * step)
                for e in basis
            ]
        )
        fd_hess = np.column_stack(
            [
                (gradient(data, theta + e, t0, cfg) - gradient(data, theta - e, t0, cfg))
                / (2 * step)
                for e in basis
            ]
        )

        assert np.linalg.norm(fd_grad - grad) <= 1e-6 * max(1.0, np.linalg.norm(grad))
        assert np.linalg.norm(fd_hess - hess) <= 1e-6 * max(1.0, np.linalg.norm(hess))


def test_objective_is_convex() -> None:
    rng = np.random.default_rng(321)
    for _ in range(50):
        data, cfg, a, t0 = _random_instance(rng)
        b = rng.uniform(-1.0, 1.0, a.size)
        fa, fb = objective(data, a, t0, cfg), objective(data, b, t0, cfg)

        for lam in (0.1, 0.25, 0.5, 0.75, 0.9):
            mixed = objective(data, lam * a + (1 - lam) * b, t0, cfg)
            assert mixed <= lam * fa + (1 - lam) * fb + 1e-9 * (abs(fa) + abs(fb))
        assert np.linalg.eigvalsh(hessian(data, a, t0, cfg)).min() >= -1e-10


def test_warm_and_cold_starts_agree() -> None:
    data = _pareto_data(800)
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.3,), threshold=float(np.quantile(data.y, 0.7)))
    previous = None
    for t0 in np.linspace(0.0, 1.0, 11):
        cold = fit_at(data, [t0], cfg)
        warm = fit_at(data, [t0], cfg, init=previous)
        previous = warm.theta

        assert cold.converged and warm.converged
        np.testing.assert_allclose(warm.theta, cold.theta, rtol=0, atol=1e-7)


def test_overflowing_trial_point_is_silent() -> None:
    data = _pareto_data(200)
    cfg = FitConfig(kernel=LOCAL, bandwidths=(0.3,), threshold=float(np.median(data.y)))

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        value = objective(data, np.array([800.0, 800.0]), [0.5], cfg)

    assert value == math.inf
