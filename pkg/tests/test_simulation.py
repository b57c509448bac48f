from __future__ import annotations

import math

import numpy as np
import pytest

from common.errors import EmptyInput, InvalidConfig, ShapeMismatch
from inference import testing as hyp
from simulation.generators import (
    T_HIGH,
    T_LOW,
    SimSetting,
    gen_dataset,
    gen_t,
    gen_x,
    sample_response,
    survival,
)
from simulation.monte_carlo import TuningPolicy, mse, rejection_rate, run_monte_carlo

stats = pytest.importorskip("scipy.stats")

FIXED_POLICY = TuningPolicy(bandwidth=0.3, fraction=0.2, grid_size=11)


def _outcome(rejected: bool) -> hyp.TestOutcome:
    return hyp.TestOutcome(
        coefficient_index=1,
        label="theta1",
        null_kind=hyp.NullKind.ZERO,
        constant=0.0,
        statistic=5.0 if rejected else 1.0,
        critical_low=-0.612175,
        critical_high=4.36944,
        alpha=0.05,
        p_value=0.01,
        rejected=rejected,
    )


def test_sample_response_pure_pareto() -> None:
    assert sample_response(1.0, 0.0, 0.5) == pytest.approx(2.0)
    assert sample_response(0.5, 0.0, 0.25) == pytest.approx(2.0)
    assert sample_response(1.0, 0.3, 1.0) == pytest.approx(1.0)
    assert survival(2.0, 1.0, 0.0) == pytest.approx(0.5)


def test_survival_inverts_sample_response() -> None:
    u = np.linspace(0.01, 1.0, 50)
    gamma = np.full(50, 0.7)

    y = sample_response(gamma, 0.1, u)

    np.testing.assert_allclose(survival(y, gamma, 0.1), u, rtol=1e-12)
    assert np.all(y >= 1.0)


def test_gen_x_margins_and_dependence() -> None:
    x = gen_x(20000, 3, np.random.default_rng(1))
    bound = math.sqrt(3.0)

    assert x.shape == (20000, 3)
    assert np.all(np.abs(x) <= bound)
    np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=0.03)
    np.testing.assert_allclose(x.var(axis=0), 1.0, atol=0.03)
    rho_s = stats.spearmanr(x[:, 0], x[:, 1]).correlation
    assert rho_s == pytest.approx(6.0 / math.pi * math.asin(0.25), abs=0.03)


def test_gen_x_rejects_empty_design() -> None:
    with pytest.raises(InvalidConfig):
        gen_x(10, 0, np.random.default_rng(0))


def test_gen_t_range() -> None:
    t = gen_t(5000, 2, np.random.default_rng(2))

    assert t.shape == (5000, 2)
    assert t.min() >= T_LOW and t.max() <= T_HIGH


def test_setting_layouts() -> None:
    one, two, three = (SimSetting(setting_id=s) for s in (1, 2, 3))

    assert (one.p, one.q, one.with_intercept, one.folds) == (3, 1, False, 20)
    assert (two.p, two.q, two.folds) == (10, 1, 20)
    assert (three.p, three.q, three.with_intercept, three.folds) == (2, 2, True, 50)


@pytest.mark.parametrize(
    "kwargs",
    [{"setting_id": 4}, {"delta": -0.1}, {"n": 0}],
)
def test_setting_validation(kwargs: dict) -> None:
    with pytest.raises(InvalidConfig):
        SimSetting(**kwargs)


def test_gamma_oracles() -> None:
    one = SimSetting(setting_id=1)
    three = SimSetting(setting_id=3)

    assert one.gamma(np.ones(3), np.zeros(1))[0] == pytest.approx(math.exp(-2.0))
    assert one.gamma([0.0, 1.0, 5.0], [math.pi / 4])[0] == pytest.approx(1.0)
    assert three.gamma([0.0, 0.0], [0.5, 0.5])[0] == pytest.approx(math.exp(-2.0))
    assert three.gamma([1.0, 0.0], [0.5, 0.5])[0] == pytest.approx(math.exp(-1.0))


def test_gen_dataset_is_deterministic() -> None:
    setting = SimSetting(setting_id=3, n=200)

    first = gen_dataset(setting, np.random.default_rng(9)).dataset
    second = gen_dataset(setting, np.random.default_rng(9)).dataset

    assert (first.p, first.q, first.n) == (2, 2, 200)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.t, second.t)
    assert np.all(first.y >= 1.0)


def test_mse() -> None:
    estimates = np.array([[1.0, 2.0], [3.0, 4.0]])

    assert mse(estimates, [1.0, 2.0]) == pytest.approx(2.0)
    assert mse(np.array([[1.0, np.nan], [3.0, 2.0]]), [1.0, 2.0]) == pytest.approx(4.0 / 3.0)
    assert math.isnan(mse(np.full((2, 2), np.nan), [1.0, 2.0]))
    with pytest.raises(ShapeMismatch):
        mse(estimates, [1.0, 2.0, 3.0])


def test_rejection_rate() -> None:
    assert rejection_rate([_outcome(True), _outcome(False), _outcome(True), _outcome(True)]) == 0.75
    with pytest.raises(EmptyInput):
        rejection_rate([])


def test_monte_carlo_rejects_no_replications() -> None:
    with pytest.raises(InvalidConfig):
        run_monte_carlo(SimSetting(n=500), 0, FIXED_POLICY, seed=1)


def test_small_monte_carlo_run() -> None:
    setting = SimSetting(setting_id=1, n=500)

    report = run_monte_carlo(setting, 2, FIXED_POLICY, seed=7)

    assert report.replications == 2
    assert report.succeeded + report.failures == 2
    assert report.labels == ("theta1", "theta2", "theta3")
    assert report.grid.shape == (11, 1)
    assert report.truth.shape == (11, 3)
    assert report.mean_estimate.shape == (11, 3)
    assert len(report.mse) == 3
    assert all(0.0 <= rate <= 1.0 for rate in report.rr_zero if not math.isnan(rate))
    assert report.selected_fractions == (0.2,) * report.succeeded


def test_monte_carlo_is_reproducible_serial_and_parallel() -> None:
    setting = SimSetting(setting_id=1, n=500)

    first = run_monte_carlo(setting, 2, FIXED_POLICY, seed=11)
    second = run_monte_carlo(setting, 2, FIXED_POLICY, seed=11, n_jobs=2)

    np.testing.assert_allclose(first.mse, second.mse, rtol=1e-10)
    np.testing.assert_allclose(first.mean_estimate, second.mean_estimate, rtol=1e-10)
    np.testing.assert_array_equal(first.rr_zero, second.rr_zero)


def test_tuned_monte_carlo_run() -> None:
    policy = TuningPolicy(
        bandwidth_candidates=(0.3, 0.5),
        fraction_candidates=(0.3, 0.2),
        folds=3,
        grid_size=11,
    )

    report = run_monte_carlo(SimSetting(setting_id=1, n=400), 1, policy, seed=3)

    if report.succeeded:
        assert report.selected_bandwidths[0] in {(0.3,), (0.5,)}
        assert report.selected_fractions[0] in {0.3, 0.2}
    else:
        assert report.failure_kinds


@pytest.mark.slow
def test_setting_one_desk_scale_reproduction() -> None:
    report = run_monte_carlo(SimSetting(setting_id=1, delta=0.25, n=500), 100, TuningPolicy(), seed=2024)

    assert report.succeeded >= 95
    assert 0.0 < report.mse[0] <= 0.26
    assert 0.0 < report.mse[1] <= 0.30
    assert report.rr_zero[1] >= 0.90
    assert report.rr_zero[2] <= 0.10
    assert report.rr_constant[0] <= 0.10


@pytest.mark.slow
def test_constancy_power_grows_with_sample_size() -> None:
    reports = [
        run_monte_carlo(SimSetting(setting_id=1, delta=0.1, n=n), 50, TuningPolicy(), seed=77)
        for n in (200, 500, 1000)
    ]
    power = [report.rr_constant[1] for report in reports]

    assert power[0] <= power[1] <= power[2]
    assert power[2] >= 0.90


@pytest.mark.slow
def test_setting_three_spherical_kernel_rates() -> None:
    report = run_monte_carlo(SimSetting(setting_id=3, delta=0.1, n=1000), 50, TuningPolicy(), seed=5)

    assert report.grid.shape[1] == 2
    assert report.labels[0] == "theta0"
    assert report.rr_zero[0] == 1.0
    assert report.rr_zero[2] <= 0.10


@pytest.mark.slow
def test_constant_test_type_one_rate() -> None:
    policy = TuningPolicy(bandwidth=0.3, fraction=0.2)

    report = run_monte_carlo(SimSetting(setting_id=1, delta=0.0, n=1000), 200, policy, seed=99)

    assert report.rr_constant[0] <= 0.10
    assert report.rr_constant[2] <= 0.10
