"""Command-line entry point tying ingestion, estimation, tuning, testing and reports together."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, MutableMapping, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from common.config import load_config, merge_overrides
from common.errors import InvalidConfig, TailRegressionError
from common.logging import settings_from_config, setup_logging
from common.models import FitTemplate, GridFit, coefficient_labels
from estimation.estimator import fit_grid
from estimation.kernels import KernelFamily, KernelSpec, XiVariant
from estimation.tuning import (
    DEFAULT_BANDWIDTHS,
    DEFAULT_FRACTIONS,
    DiscrepancyVariant,
    threshold_for_fraction,
    tune,
)
from inference.diagnostics import (
    DEFAULT_ENVELOPE_REPS,
    Reference,
    compare_models,
    exceedance_residuals,
    ks_statistic,
    qq_data,
    reduced_candidates,
)
from inference.testing import grid_sigma_hat, pointwise_ci, test_all
from simulation.generators import SimSetting
from simulation.monte_carlo import TuningPolicy, run_monte_carlo

from . import report
from .ingest import ColumnMapping, IngestedData, ingest_csv

logger = logging.getLogger(__name__)

KERNEL_NAMES: dict[str, KernelFamily] = {
    "epanechnikov": KernelFamily.EPANECHNIKOV_PRODUCT,
    "spherical": KernelFamily.EPANECHNIKOV_SPHERICAL,
}


class Command(str, Enum):
    FIT = "fit"
    TUNE = "tune"
    TEST = "test"
    SIMULATE = "simulate"
    QQ = "qq"
    COMPARE = "compare"


class DataSection(BaseModel):
    input: Optional[Path] = Field(default=None, description="CSV file with a header row")
    mapping: ColumnMapping = Field(default_factory=ColumnMapping)
    normal_score: list[str] = Field(default_factory=list, description="x-columns to normal-score")


class EstimationSection(BaseModel):
    kernel: Literal["epanechnikov", "spherical"] = "epanechnikov"
    bandwidth: Optional[float] = Field(default=None, gt=0, description="Common bandwidth")
    fraction: Optional[float] = Field(default=None, gt=0, lt=1, description="Sample fraction n0/n")
    include_intercept: bool = True
    grid_size: Optional[int] = Field(default=None, ge=2)
    xi_variant: XiVariant = XiVariant.ROSENBLATT


class TuningSection(BaseModel):
    bandwidth_grid: list[float] = Field(default_factory=lambda: list(DEFAULT_BANDWIDTHS))
    fraction_grid: list[float] = Field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    fraction0: float = Field(default=0.2, gt=0, lt=1)
    folds: int = Field(default=20, ge=2)
    discrepancy_variant: DiscrepancyVariant = DiscrepancyVariant.LITERAL


class TestingSection(BaseModel):
    alpha: float = Field(default=0.05, gt=0, lt=1)
    ci_level: float = Field(default=0.95, ge=0, lt=1)
    coefficient: Optional[int] = Field(default=None, ge=0, description="Coefficient for `compare`")
    envelope_reps: int = Field(default=DEFAULT_ENVELOPE_REPS, ge=0)


class SimulationSection(BaseModel):
    setting: Literal[1, 2, 3] = 1
    delta: float = Field(default=0.1, ge=0)
    n: int = Field(default=1000, ge=1)
    replications: int = Field(default=100, ge=1)


class RunConfig(BaseModel):
    """Validated configuration for one command-line run."""

    command: Command
    seed: Optional[int] = None
    n_jobs: int = 1
    output: Path = Path("results")
    data: DataSection = Field(default_factory=DataSection)
    estimation: EstimationSection = Field(default_factory=EstimationSection)
    tuning: TuningSection = Field(default_factory=TuningSection)
    testing: TestingSection = Field(default_factory=TestingSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise InvalidConfig(message)


def _columns(value: Optional[str]) -> Optional[list[str]]:
    if value is None:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def _floats(value: Optional[str]) -> Optional[list[float]]:
    items = _columns(value)
    if items is None:
        return None
    try:
        return [float(item) for item in items]
    except ValueError as exc:
        raise InvalidConfig(f"expected comma-separated numbers, got {value!r}") from exc


def parse_args(argv: Iterable[str] | None = None) -> argparse.Namespace:
    parser = _Parser(description="Varying-coefficient tail index regression")
    parser.add_argument("--config", default=None, help="Path to YAML configuration file")
    parser.add_argument("--command", choices=[c.value for c in Command], default=None)
    parser.add_argument("--input", default=None, help="Input CSV with a header row")
    parser.add_argument("--output", default=None, help="Output directory")
    parser.add_argument("--response", default=None)
    parser.add_argument("--x-cols", default=None, help="Comma-separated linear covariates")
    parser.add_argument("--t-cols", default=None, help="Comma-separated smoothing covariates")
    parser.add_argument("--kernel", choices=sorted(KERNEL_NAMES), default=None)
    parser.add_argument("--bandwidth", type=float, default=None)
    parser.add_argument("--bandwidth-grid", default=None, help="Comma-separated candidates")
    parser.add_argument("--fraction", type=float, default=None, help="Sample fraction n0/n")
    parser.add_argument("--fraction-grid", default=None, help="Comma-separated candidates")
    parser.add_argument("--fraction0", type=float, default=None, help="Fraction used for CV")
    parser.add_argument("--folds", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--level", type=float, default=None, help="Pointwise CI level")
    parser.add_argument("--grid-size", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--normal-score", default=None, help="Comma-separated x-columns")
    parser.add_argument("--no-intercept", action="store_true")
    parser.add_argument("--discrepancy-variant", choices=[v.value for v in DiscrepancyVariant])
    parser.add_argument("--xi-variant", choices=[v.value for v in XiVariant])
    parser.add_argument("--coefficient", type=int, default=None, help="Coefficient for compare")
    parser.add_argument("--envelope-reps", type=int, default=None)
    parser.add_argument("--setting", type=int, default=None)
    parser.add_argument("--delta", type=float, default=None)
    parser.add_argument("--n", type=int, default=None)
    parser.add_argument("--replications", type=int, default=None)
    parser.add_argument("--n-jobs", type=int, default=None)
    return parser.parse_args(list(argv) if argv is not None else None)


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "command": args.command,
        "seed": args.seed,
        "n_jobs": args.n_jobs,
        "output": args.output,
        "data": {
            "input": args.input,
            "mapping": {
                "response": args.response,
                "x_columns": _columns(args.x_cols),
                "t_columns": _columns(args.t_cols),
            },
            "normal_score": _columns(args.normal_score),
        },
        "estimation": {
            "kernel": args.kernel,
            "bandwidth": args.bandwidth,
            "fraction": args.fraction,
            "include_intercept": False if args.no_intercept else None,
            "grid_size": args.grid_size,
            "xi_variant": args.xi_variant,
        },
        "tuning": {
            "bandwidth_grid": _floats(args.bandwidth_grid),
            "fraction_grid": _floats(args.fraction_grid),
            "fraction0": args.fraction0,
            "folds": args.folds,
            "discrepancy_variant": args.discrepancy_variant,
        },
        "testing": {
            "alpha": args.alpha,
            "ci_level": args.level,
            "coefficient": args.coefficient,
            "envelope_reps": args.envelope_reps,
        },
        "simulation": {
            "setting": args.setting,
            "delta": args.delta,
            "n": args.n,
            "replications": args.replications,
        },
    }


def _run_sections(config: Mapping[str, Any]) -> MutableMapping[str, Any]:
    return {key: value for key, value in config.items() if key != "logging"}


def build_run_config(args: argparse.Namespace) -> tuple[RunConfig, dict[str, Any]]:
    """Merge YAML defaults with command-line overrides and validate the result."""

    raw: dict[str, Any] = load_config(args.config) if args.config else {}
    merged = merge_overrides(_run_sections(raw), _overrides(args))
    try:
        return RunConfig.model_validate(merged), raw
    except ValidationError as exc:
        raise InvalidConfig(str(exc)) from exc


def _template(config: RunConfig, q: int) -> FitTemplate:
    return FitTemplate(
        kernel=KernelSpec(KERNEL_NAMES[config.estimation.kernel], q),
        include_intercept=config.estimation.include_intercept,
    )


def _load(config: RunConfig) -> IngestedData:
    if config.data.input is None:
        raise InvalidConfig(f"command {config.command.value!r} needs --input")
    return ingest_csv(
        config.data.input,
        config.data.mapping,
        normal_score=config.data.normal_score,
        rng=np.random.default_rng(config.seed),
    )


def _fitted_grid(config: RunConfig, ingested: IngestedData) -> GridFit:
    data = ingested.dataset
    estimation = config.estimation
    if estimation.bandwidth is None or estimation.fraction is None:
        raise InvalidConfig(f"command {config.command.value!r} needs --bandwidth and --fraction")
    cfg = _template(config, data.q).config(
        estimation.bandwidth, threshold_for_fraction(data.y, estimation.fraction)
    )
    return fit_grid(data, estimation.grid_size, cfg, n_jobs=config.n_jobs)


def _run_fit(config: RunConfig, directory: Path) -> list[Path]:
    ingested = _load(config)
    data = ingested.dataset
    grid_fit = _fitted_grid(config, ingested)
    labels = coefficient_labels(data.p, config.estimation.include_intercept)
    sigma = grid_sigma_hat(data, grid_fit)
    intervals = {
        label: pointwise_ci(grid_fit, j, data, level=config.testing.ci_level, sigma=sigma)
        for j, label in enumerate(labels)
    }
    return [
        report.write_grid_fit(
            grid_fit, directory / "grid_fit.csv", labels, ingested.maps, data.t_names
        ),
        report.write_confidence_intervals(
            grid_fit,
            intervals,
            directory / "confidence_intervals.csv",
            ingested.maps,
            data.t_names,
        ),
    ]


def _run_tune(config: RunConfig, directory: Path) -> list[Path]:
    data = _load(config).dataset
    result = tune(
        data,
        _template(config, data.q),
        fraction0=config.tuning.fraction0,
        bandwidth_candidates=config.tuning.bandwidth_grid,
        fraction_candidates=config.tuning.fraction_grid,
        folds=config.tuning.folds,
        seed=config.seed,
        variant=config.tuning.discrepancy_variant,
        n_jobs=config.n_jobs,
    )
    return report.write_tuning(result, directory)


def _run_test(config: RunConfig, directory: Path) -> list[Path]:
    ingested = _load(config)
    grid_fit = _fitted_grid(config, ingested)
    outcomes = test_all(
        ingested.dataset,
        grid_fit,
        config.testing.alpha,
        xi_variant=config.estimation.xi_variant,
    )
    return report.write_outcomes(outcomes, directory)


def _run_simulate(config: RunConfig, directory: Path) -> list[Path]:
    simulation = config.simulation
    setting = SimSetting(simulation.setting, simulation.delta, simulation.n)
    policy = TuningPolicy(
        fraction0=config.tuning.fraction0,
        bandwidth_candidates=tuple(config.tuning.bandwidth_grid),
        fraction_candidates=tuple(config.tuning.fraction_grid),
        folds=None,
        bandwidth=config.estimation.bandwidth,
        fraction=config.estimation.fraction,
        variant=config.tuning.discrepancy_variant,
        alpha=config.testing.alpha,
        grid_size=config.estimation.grid_size,
        xi_variant=config.estimation.xi_variant,
    )
    mc = run_monte_carlo(setting, simulation.replications, policy, config.seed, n_jobs=config.n_jobs)
    return report.write_mc_report(mc, directory)


def _run_qq(config: RunConfig, directory: Path) -> list[Path]:
    ingested = _load(config)
    grid_fit = _fitted_grid(config, ingested)
    index, residuals = exceedance_residuals(ingested.dataset, grid_fit.config, grid_fit)
    qq = qq_data(residuals, config.testing.envelope_reps, np.random.default_rng(config.seed))
    logger.info(
        "Exponential residuals: KS distance %.4f, %.1f%% outside the envelope",
        ks_statistic(residuals, Reference.EXP1),
        100.0 * qq.outside_fraction,
    )
    return [
        report.write_qq(qq, directory),
        report.write_residuals(ingested.dataset, index, residuals, directory, ingested.maps),
    ]


def _run_compare(config: RunConfig, directory: Path) -> list[Path]:
    ingested = _load(config)
    data = ingested.dataset
    grid_fit = _fitted_grid(config, ingested)
    j = config.testing.coefficient
    if j is None:
        raise InvalidConfig("command 'compare' needs --coefficient")
    if j >= grid_fit.thetas.shape[1]:
        raise InvalidConfig(f"coefficient {j} outside 0..{grid_fit.thetas.shape[1] - 1}")
    estimates = grid_fit.coefficient(j)[grid_fit.ok]
    constant = float(np.mean(estimates)) if estimates.size else None
    candidates = reduced_candidates(data, grid_fit.config, j, constant)
    rows = compare_models(candidates, config.tuning.discrepancy_variant)
    return report.write_comparison(rows, directory)


_COMMANDS = {
    Command.FIT: _run_fit,
    Command.TUNE: _run_tune,
    Command.TEST: _run_test,
    Command.SIMULATE: _run_simulate,
    Command.QQ: _run_qq,
    Command.COMPARE: _run_compare,
}


def run(config: RunConfig) -> list[Path]:
    """Execute one command and write its artifacts plus a manifest."""

    directory = report.output_directory(config.output)
    logger.info("Starting %s", config.command.value, extra={"output": str(directory)})
    outputs = _COMMANDS[config.command](config, directory)
    manifest = report.RunManifest(
        command=config.command.value,
        seed=config.seed,
        xi_variant=config.estimation.xi_variant.value,
        discrepancy_variant=config.tuning.discrepancy_variant.value,
        config=config.model_dump(mode="json"),
        outputs=[str(path.relative_to(directory)) for path in outputs],
        versions=report.package_versions(),
    )
    outputs.append(report.write_manifest(manifest, directory))
    logger.info("Finished %s", config.command.value, extra={"files": len(outputs)})
    return outputs


def _error_record(exc: TailRegressionError) -> dict[str, Any]:
    return {"kind": exc.kind, "message": str(exc), "exit_code": exc.exit_code}


def _report_error(exc: TailRegressionError, output: Optional[Path]) -> int:
    record = _error_record(exc)
    print(json.dumps(record), file=sys.stderr)
    if output is not None:
        try:
            output.mkdir(parents=True, exist_ok=True)
            (output / "error.json").write_text(json.dumps(record, indent=2))
        except OSError:
            logger.exception("Could not write error record to %s", output)
    logger.error("%s: %s", exc.kind, exc)
    return exc.exit_code


def main(argv: Iterable[str] | None = None) -> int:
    output: Optional[Path] = None
    try:
        args = parse_args(argv)
        output = Path(args.output) if args.output else None
        config, raw = build_run_config(args)
        output = config.output
        setup_logging(settings_from_config(raw))
        run(config)
    except TailRegressionError as exc:
        return _report_error(exc, output)
    return 0


if __name__ == "__main__":  # pragma: no cover - CLI execution path
    sys.exit(main())
