from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from app.ingest import ColumnMapping, ingest_csv, normal_score_transform
from app.report import read_grid_fit, write_grid_fit
from app.runtime import build_run_config, main, parse_args
from common.errors import FileNotFound, InvalidConfig, NonPositiveResponse, ParseError
from common.models import FitConfig
from estimation.estimator import fit_grid
from estimation.kernels import KernelFamily, KernelSpec
from estimation.tuning import threshold_for_fraction
from simulation.generators import SimSetting, gen_dataset

pd = pytest.importorskip("pandas")
stats = pytest.importorskip("scipy.stats")

MAPPING = ColumnMapping(response="y", x_columns=["x1", "x2", "x3"], t_columns=["age"])


def _write_csv(path: Path, n: int = 600, seed: int = 13) -> Path:
    data = gen_dataset(SimSetting(setting_id=1, n=n), np.random.default_rng(seed)).dataset
    frame = pd.DataFrame(
        {
            "y": data.y,
            "x1": data.x[:, 0],
            "x2": data.x[:, 1],
            "x3": data.x[:, 2],
            "age": 20.0 + 50.0 * data.t[:, 0],
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def _common_args(csv_path: Path, output: Path) -> list[str]:
    return [
        "--input",
        str(csv_path),
        "--output",
        str(output),
        "--response",
        "y",
        "--x-cols",
        "x1,x2,x3",
        "--t-cols",
        "age",
        "--no-intercept",
        "--bandwidth",
        "0.3",
        "--fraction",
        "0.2",
        "--grid-size",
        "11",
    ]


def test_ingest_rescales_t(tmp_path: Path) -> None:
    csv_path = _write_csv(tmp_path / "data.csv")

    ingested = ingest_csv(csv_path, MAPPING)

    data = ingested.dataset
    assert (data.n, data.p, data.q) == (600, 3, 1)
    assert data.t_names == ("age",)
    assert data.t.min() == 0.0 and data.t.max() == 1.0
    assert ingested.maps[0].low >= 20.0 - 50.0 * 0.2 - 1e-9


def test_ingest_missing_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFound):
        ingest_csv(tmp_path / "absent.csv", MAPPING)


def test_ingest_missing_column(tmp_path: Path) -> None:
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("y,x1,age\n2.0,0.1,30\n3.0,0.2,40\n")

    with pytest.raises(InvalidConfig):
        ingest_csv(csv_path, MAPPING)


def test_ingest_reports_unparseable_cell(tmp_path: Path) -> None:
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("y,x1,age\n2.0,0.1,30\n3.0,abc,40\n")

    with pytest.raises(ParseError) as excinfo:
        ingest_csv(csv_path, ColumnMapping(x_columns=["x1"], t_columns=["age"]))

    assert excinfo.value.row == 2
    assert excinfo.value.column == "x1"
    assert excinfo.value.value == "abc"


def test_ingest_rejects_non_positive_response(tmp_path: Path) -> None:
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("y,age\n2.0,30\n-1.0,40\n")

    with pytest.raises(NonPositiveResponse):
        ingest_csv(csv_path, ColumnMapping(t_columns=["age"]))


def test_column_roles_must_be_disjoint() -> None:
    with pytest.raises(ValueError):
        ColumnMapping(response="y", x_columns=["a"], t_columns=["a"])


def test_normal_score_on_distinct_values() -> None:
    scores = normal_score_transform([3.0, 1.0, 2.0], np.random.default_rng(0))

    expected = stats.norm.ppf((np.array([3, 1, 2]) - 0.375) / 3.25)
    np.testing.assert_allclose(scores, expected)
    assert scores.sum() == pytest.approx(0.0, abs=1e-12)


def test_normal_score_breaks_ties() -> None:
    scores = normal_score_transform([1.0, 1.0, 1.0, 5.0], np.random.default_rng(1))

    assert len(set(scores.tolist())) == 4
    assert scores[3] == scores.max()


def test_normal_score_only_for_x_columns(tmp_path: Path) -> None:
    csv_path = _write_csv(tmp_path / "data.csv", n=50)

    with pytest.raises(InvalidConfig):
        ingest_csv(csv_path, MAPPING, normal_score=["age"])


def test_cli_overrides_reach_config(tmp_path: Path) -> None:
    args = parse_args(["--command", "tune", "--folds", "5", "--bandwidth-grid", "0.1, 0.2"])

    config, _ = build_run_config(args)

    assert config.tuning.folds == 5
    assert config.tuning.bandwidth_grid == [0.1, 0.2]
    assert config.tuning.fraction0 == 0.2


def test_yaml_config_is_merged(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    config_path.write_text("command: simulate\nsimulation:\n  n: 300\ntesting:\n  alpha: 0.1\n")

    config, _ = build_run_config(parse_args(["--config", str(config_path), "--alpha", "0.01"]))

    assert config.command.value == "simulate"
    assert config.simulation.n == 300
    assert config.testing.alpha == 0.01


def test_main_missing_input_exits_with_data_error(tmp_path: Path) -> None:
    output = tmp_path / "out"

    code = main(["--command", "test", "--input", str(tmp_path / "absent.csv"), "--output", str(output)])

    record = json.loads((output / "error.json").read_text())
    assert code == 2
    assert record["kind"] == "FileNotFound"


def test_main_invalid_alpha_exits_with_usage_error(tmp_path: Path) -> None:
    output = tmp_path / "out"

    code = main(["--command", "simulate", "--alpha", "1.5", "--output", str(output)])

    assert code == 1
    assert json.loads((output / "error.json").read_text())["exit_code"] == 1


def test_main_unknown_flag_is_usage_error(tmp_path: Path) -> None:
    assert main(["--command", "fit", "--bogus"]) == 1


def test_test_command_writes_outcomes_and_manifest(tmp_path: Path) -> None:
    csv_path = _write_csv(tmp_path / "data.csv")
    output = tmp_path / "out"

    code = main(["--command", "test", *_common_args(csv_path, output)])

    assert code == 0
    outcomes = pd.read_csv(output / "tests.csv")
    assert outcomes["coefficient"].tolist() == ["theta1", "theta1", "theta2", "theta2", "theta3", "theta3"]
    assert (output / "tests.md").is_file()
    manifest = json.loads((output / "manifest.json").read_text())
    assert manifest["command"] == "test"
    assert manifest["xi_variant"] == "rosenblatt"


def test_fit_command_writes_grid_and_intervals(tmp_path: Path) -> None:
    csv_path = _write_csv(tmp_path / "data.csv")
    output = tmp_path / "out"

    code = main(["--command", "fit", *_common_args(csv_path, output)])

    assert code == 0
    grid = pd.read_csv(output / "grid_fit.csv")
    intervals = pd.read_csv(output / "confidence_intervals.csv")
    assert len(grid) == 11
    assert {"theta1", "theta2", "theta3"} <= set(grid.columns)
    ok = grid["ok"].to_numpy(dtype=bool)
    assert np.all(intervals["theta2_low"][ok] <= grid["theta2"][ok])
    assert np.all(intervals["theta2_high"][ok] >= grid["theta2"][ok])


def test_fit_command_needs_bandwidth(tmp_path: Path) -> None:
    csv_path = _write_csv(tmp_path / "data.csv", n=100)
    output = tmp_path / "out"

    code = main(
        ["--command", "fit", "--input", str(csv_path), "--output", str(output),
         "--x-cols", "x1,x2,x3", "--t-cols", "age"]
    )

    assert code == 1
    assert json.loads((output / "error.json").read_text())["kind"] == "InvalidConfig"


def _snapshot(directory: Path) -> dict[str, bytes]:
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir()) if path.is_file()}


def test_simulate_command_is_deterministic(tmp_path: Path) -> None:
    output = tmp_path / "out"
    args = [
        "--command", "simulate", "--setting", "1", "--n", "400", "--replications", "2",
        "--bandwidth", "0.3", "--fraction", "0.2", "--grid-size", "11", "--seed", "5",
        "--output", str(output),
    ]

    assert main(args) == 0
    first = _snapshot(output)
    assert main(args) == 0
    second = _snapshot(output)

    assert {"manifest.json", "mc_summary.csv", "mc_bands.csv", "mc_report.md"} <= set(first)
    assert first == second
    manifest = json.loads(first["manifest.json"])
    assert manifest["seed"] == 5
    assert "mc_summary.csv" in manifest["outputs"]


def test_fit_outputs_carry_original_scale_t(tmp_path: Path) -> None:
    csv_path = _write_csv(tmp_path / "data.csv")
    age = pd.read_csv(csv_path)["age"]
    output = tmp_path / "out"

    assert main(["--command", "fit", *_common_args(csv_path, output)]) == 0

    for name in ("grid_fit.csv", "confidence_intervals.csv"):
        frame = pd.read_csv(output / name)
        original = frame["age_original"].to_numpy()
        assert original[0] == pytest.approx(age.min(), abs=1e-12)
        assert original[-1] == pytest.approx(age.max(), abs=1e-12)
        expected = age.min() + frame["t1"].to_numpy() * (age.max() - age.min())
        np.testing.assert_allclose(original, expected, rtol=0, atol=1e-12)


def test_qq_command_writes_residual_rows(tmp_path: Path) -> None:
    csv_path = _write_csv(tmp_path / "data.csv")
    source = pd.read_csv(csv_path)
    output = tmp_path / "out"

    code = main(
        ["--command", "qq", *_common_args(csv_path, output), "--envelope-reps", "50", "--seed", "3"]
    )

    assert code == 0
    qq = pd.read_csv(output / "qq.csv")
    residuals = pd.read_csv(output / "residuals.csv")
    assert len(residuals) == len(qq)
    np.testing.assert_allclose(residuals["residual"], qq["empirical"], rtol=1e-15)
    rows = residuals["row"].to_numpy() - 1
    np.testing.assert_allclose(residuals["age_original"], source["age"].to_numpy()[rows], atol=1e-9)
    np.testing.assert_allclose(residuals["y"], source["y"].to_numpy()[rows], rtol=1e-12)


def test_grid_fit_round_trip(tmp_path: Path) -> None:
    ingested = ingest_csv(_write_csv(tmp_path / "data.csv"), MAPPING)
    data = ingested.dataset
    cfg = FitConfig(
        kernel=KernelSpec(KernelFamily.EPANECHNIKOV_PRODUCT, 1),
        bandwidths=(0.3,),
        threshold=threshold_for_fraction(data.y, 0.2),
        include_intercept=False,
    )
    grid_fit = fit_grid(data, 11, cfg)

    path = write_grid_fit(
        grid_fit, tmp_path / "grid_fit.csv", maps=ingested.maps, t_names=data.t_names
    )
    restored = read_grid_fit(path, cfg)

    np.testing.assert_allclose(restored.thetas, grid_fit.thetas, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(restored.grid, grid_fit.grid, atol=1e-12)
    assert restored.ok.tolist() == grid_fit.ok.tolist()
    assert restored.axis_points == 11
