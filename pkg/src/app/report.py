"""Tidy CSV tables, Markdown summaries and run manifests for command-line runs."""

from __future__ import annotations

import logging
import math
import os
from importlib import metadata
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from jinja2 import Environment
from pydantic import BaseModel, Field

from common.errors import FileNotFound, ShapeMismatch
from common.models import AffineMap, CoefficientFit, Dataset, FitConfig, GridFit
from estimation.tuning import TuningResult
from inference.diagnostics import ModelComparison, QqData
from inference.testing import TestOutcome
from simulation.monte_carlo import McReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
ORIGINAL_SUFFIX = "_original"

_TESTS_TEMPLATE = """\
# Coefficient tests

Significance level {{ alpha }}; reject when T < {{ "%.2f"|format(low) }} or T > {{ "%.2f"|format(high) }}.

| Coefficient | Null | Constant | Test statistic | p-value | Result |
|---|---|---|---|---|---|
{% for row in rows -%}
| {{ row.label }} | {{ row.null_kind.value }} | {{ "%.4g"|format(row.constant) }} | {{ "%.2f"|format(row.statistic) }} | {{ "%.5f"|format(row.p_value) }} | {{ "Reject" if row.rejected else "Accept" }}{{ " (degenerate)" if row.degenerate else "" }} |
{% endfor %}
"""

_TUNING_TEMPLATE = """\
# Tuning
{% if result.bandwidths is not none %}
Selected bandwidths: {{ result.bandwidths|join(", ") }}
{% endif %}{% if result.threshold is not none %}
Selected threshold: {{ "%.6g"|format(result.threshold) }} (sample fraction {{ "%.3f"|format(result.fraction) }})
{% endif %}
{% if result.cv_table %}
| Bandwidths | CV score | Fitted | Failed |
|---|---|---|---|
{% for row in result.cv_table -%}
| {{ row.bandwidths|join(", ") }} | {{ "%.6g"|format(row.score) }} | {{ row.fitted }} | {{ row.failed }} |
{% endfor %}{% endif %}
{% if result.dm_table %}
| Threshold | Fraction | Exceedances | Discrepancy |
|---|---|---|---|
{% for row in result.dm_table -%}
| {{ "%.6g"|format(row.threshold) }} | {{ "%.3f"|format(row.fraction) }} | {{ row.exceedances }} | {{ "%.4e"|format(row.discrepancy) }} |
{% endfor %}{% endif %}
"""

_MC_TEMPLATE = """\
# Monte Carlo: setting {{ report.setting.setting_id }}

n = {{ report.setting.n }}, delta = {{ report.setting.delta }}, M = {{ report.replications }} ({{ report.failures }} failed), seed = {{ report.seed }}

| Coefficient | MSE | RR constant | RR zero |
|---|---|---|---|
{% for label, mse, rc, rz in rows -%}
| {{ label }} | {{ "%.4f"|format(mse) }} | {{ "%.2f"|format(rc) }} | {{ "%.2f"|format(rz) }} |
{% endfor %}
{% if report.selected_fractions %}
Median selected sample fraction: {{ "%.3f"|format(median_fraction) }}
{% endif %}"""

_COMPARE_TEMPLATE = """\
# Model comparison

| Model | Bandwidths | Threshold | Fraction | Discrepancy | KS (Exp(1)) |
|---|---|---|---|---|---|
{% for row in rows -%}
| {{ row.name }} | {{ row.bandwidths|join(", ") or "-" }} | {{ "%.6g"|format(row.threshold) }} | {{ "%.3f"|format(row.fraction) }} | {{ "%.4e"|format(row.discrepancy) }} | {{ "%.4f"|format(row.ks_exp) }} |
{% endfor %}
"""

_env = Environment(autoescape=False, trim_blocks=False, keep_trailing_newline=True)


class RunManifest(BaseModel):
    """Audit record written next to every run's outputs."""

    command: str = Field(..., description="Command that produced the outputs")
    seed: Optional[int] = Field(default=None, description="Master random seed")
    xi_variant: str = Field(..., description="Form of the Xi matrix in the centering constant")
    discrepancy_variant: str = Field(..., description="Discrepancy comparison used for thresholds")
    config: dict[str, Any] = Field(default_factory=dict, description="Validated run configuration")
    outputs: list[str] = Field(
        default_factory=list, description="Files written by the run, relative to the output directory"
    )
    versions: dict[str, str] = Field(default_factory=dict, description="Versions of numerical packages")


def package_versions() -> dict[str, str]:
    versions: dict[str, str] = {}
    for name in ("numpy", "scipy", "pandas", "joblib"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(manifest: RunManifest, directory: Path) -> Path:
    path = directory / "manifest.json"
    path.write_text(manifest.model_dump_json(indent=2))
    return path


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info("Wrote %s", path)
    return path


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan")
    logger.info("Wrote %s", path)
    return path


def _t_columns(q: int) -> list[str]:
    return [f"t{k + 1}" for k in range(q)]


def _grid_frame(
    grid: np.ndarray, maps: Sequence[AffineMap] = (), t_names: Sequence[str] = ()
) -> pd.DataFrame:
    """Rescaled grid coordinates plus, given ``maps``, the same points on the input scale."""

    q = grid.shape[1]
    frame = pd.DataFrame(grid, columns=_t_columns(q))
    if not maps:
        return frame
    if len(maps) != q:
        raise ShapeMismatch(f"{len(maps)} affine maps for a q={q} grid")
    names = list(t_names) or _t_columns(q)
    for k, (name, affine) in enumerate(zip(names, maps)):
        frame[f"{name}{ORIGINAL_SUFFIX}"] = affine.inverse(grid[:, k])
    return frame


def grid_fit_frame(
    grid_fit: GridFit,
    labels: Sequence[str],
    maps: Sequence[AffineMap] = (),
    t_names: Sequence[str] = (),
) -> pd.DataFrame:
    frame = _grid_frame(grid_fit.grid, maps, t_names)
    thetas = grid_fit.thetas
    for j, label in enumerate(labels):
        frame[label] = thetas[:, j]
    frame["ok"] = grid_fit.ok
    frame["converged"] = [fit.converged for fit in grid_fit.fits]
    frame["iterations"] = [fit.iterations for fit in grid_fit.fits]
    frame["gradient_norm"] = [fit.gradient_norm for fit in grid_fit.fits]
    frame["local_weight"] = [fit.local_exceedance_weight for fit in grid_fit.fits]
    frame["local_count"] = [fit.local_count for fit in grid_fit.fits]
    frame["failure"] = [fit.failure or "" for fit in grid_fit.fits]
    return frame


def write_grid_fit(
    grid_fit: GridFit,
    path: Path,
    labels: Optional[Sequence[str]] = None,
    maps: Sequence[AffineMap] = (),
    t_names: Sequence[str] = (),
) -> Path:
    d = grid_fit.thetas.shape[1]
    labels = list(labels) if labels is not None else [f"theta{j}" for j in range(d)]
    if len(labels) != d:
        raise ShapeMismatch(f"{len(labels)} labels for {d} coefficients")
    return _write_frame(grid_fit_frame(grid_fit, labels, maps, t_names), path)


def read_grid_fit(path: Path, config: FitConfig) -> GridFit:
    """Rebuild a ``GridFit`` written by :func:`write_grid_fit`."""

    if not path.is_file():
        raise FileNotFound(f"grid fit file {str(path)!r} does not exist")
    frame = pd.read_csv(path, keep_default_na=False, na_values=["nan", "NaN"])
    q = config.kernel.dimension
    t_cols = _t_columns(q)
    columns = list(frame.columns)
    theta_cols = [
        c
        for c in columns[: columns.index("ok")]
        if c not in t_cols and not c.endswith(ORIGINAL_SUFFIX)
    ]
    grid = frame[t_cols].to_numpy(dtype=float)
    thetas = frame[theta_cols].to_numpy(dtype=float)
    fits = tuple(
        CoefficientFit(
            location=tuple(grid[i]),
            theta=thetas[i],
            local_exceedance_weight=float(row.local_weight),
            converged=bool(row.converged),
            iterations=int(row.iterations),
            gradient_norm=float(row.gradient_norm),
            local_count=int(row.local_count),
            failure=str(row.failure) or None,
        )
        for i, row in enumerate(frame.itertuples(index=False))
    )
    axis_points = int(round(len(fits) ** (1.0 / q)))
    return GridFit(grid=grid, fits=fits, config=config, axis_points=axis_points)


def write_confidence_intervals(
    grid_fit: GridFit,
    intervals: dict[str, np.ndarray],
    path: Path,
    maps: Sequence[AffineMap] = (),
    t_names: Sequence[str] = (),
) -> Path:
    frame = _grid_frame(grid_fit.grid, maps, t_names)
    for label, bounds in intervals.items():
        frame[f"{label}_low"] = bounds[:, 0]
        frame[f"{label}_high"] = bounds[:, 1]
    return _write_frame(frame, path)


def outcomes_frame(outcomes: Sequence[TestOutcome]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "coefficient": [o.label for o in outcomes],
            "null": [o.null_kind.value for o in outcomes],
            "constant": [o.constant for o in outcomes],
            "statistic": [o.statistic for o in outcomes],
            "critical_low": [o.critical_low for o in outcomes],
            "critical_high": [o.critical_high for o in outcomes],
            "p_value": [o.p_value for o in outcomes],
            "rejected": [o.rejected for o in outcomes],
            "degenerate": [o.degenerate for o in outcomes],
        }
    )


def write_outcomes(outcomes: Sequence[TestOutcome], directory: Path) -> list[Path]:
    paths = [_write_frame(outcomes_frame(outcomes), directory / "tests.csv")]
    if outcomes:
        low, high = outcomes[0].critical_low, outcomes[0].critical_high
        text = _env.from_string(_TESTS_TEMPLATE).render(
            rows=outcomes, alpha=outcomes[0].alpha, low=low, high=high
        )
        paths.append(_write_text(directory / "tests.md", text))
    return paths


def write_tuning(result: TuningResult, directory: Path) -> list[Path]:
    paths: list[Path] = []
    if result.cv_table:
        frame = pd.DataFrame(
            {
                "bandwidths": [" ".join(f"{h:g}" for h in row.bandwidths) for row in result.cv_table],
                "cv_score": [row.score for row in result.cv_table],
                "fitted": [row.fitted for row in result.cv_table],
                "failed": [row.failed for row in result.cv_table],
            }
        )
        paths.append(_write_frame(frame, directory / "cv.csv"))
    if result.dm_table:
        frame = pd.DataFrame(
            {
                "threshold": [row.threshold for row in result.dm_table],
                "fraction": [row.fraction for row in result.dm_table],
                "exceedances": [row.exceedances for row in result.dm_table],
                "discrepancy": [row.discrepancy for row in result.dm_table],
            }
        )
        paths.append(_write_frame(frame, directory / "discrepancy.csv"))
    text = _env.from_string(_TUNING_TEMPLATE).render(result=result)
    paths.append(_write_text(directory / "tuning.md", text))
    return paths


def mc_summary_frame(report: McReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "coefficient": list(report.labels),
            "mse": list(report.mse),
            "rr_constant": list(report.rr_constant),
            "rr_zero": list(report.rr_zero),
        }
    )


def mc_bands_frame(report: McReport) -> pd.DataFrame:
    frame = pd.DataFrame(report.grid, columns=_t_columns(report.grid.shape[1]))
    for j, label in enumerate(report.labels):
        frame[f"{label}_true"] = report.truth[:, j]
        frame[f"{label}_mean"] = report.mean_estimate[:, j]
        frame[f"{label}_p05"] = report.band_low[:, j]
        frame[f"{label}_p95"] = report.band_high[:, j]
    return frame


def write_mc_report(report: McReport, directory: Path) -> list[Path]:
    paths = [
        _write_frame(mc_summary_frame(report), directory / "mc_summary.csv"),
        _write_frame(mc_bands_frame(report), directory / "mc_bands.csv"),
    ]
    selections = pd.DataFrame(
        {
            "bandwidths": [" ".join(f"{h:g}" for h in b) for b in report.selected_bandwidths],
            "fraction": list(report.selected_fractions),
        }
    )
    paths.append(_write_frame(selections, directory / "mc_selections.csv"))
    median_fraction = (
        float(np.median(report.selected_fractions)) if report.selected_fractions else math.nan
    )
    text = _env.from_string(_MC_TEMPLATE).render(
        report=report,
        rows=list(zip(report.labels, report.mse, report.rr_constant, report.rr_zero)),
        median_fraction=median_fraction,
    )
    paths.append(_write_text(directory / "mc_report.md", text))
    return paths


def write_qq(qq: QqData, directory: Path) -> Path:
    frame = pd.DataFrame({"theoretical": qq.theoretical, "empirical": qq.empirical})
    if qq.envelope_low is not None and qq.envelope_high is not None:
        frame["envelope_low"] = qq.envelope_low
        frame["envelope_high"] = qq.envelope_high
    return _write_frame(frame, directory / "qq.csv")


def write_residuals(
    data: Dataset,
    index: np.ndarray,
    residuals: np.ndarray,
    directory: Path,
    maps: Sequence[AffineMap] = (),
) -> Path:
    """One row per fitted exceedance, in the order of the Q-Q rows."""

    frame = _grid_frame(data.t[index], maps, data.t_names)
    frame.insert(0, "row", index + 1)
    frame["y"] = data.y[index]
    frame["residual"] = residuals
    return _write_frame(frame, directory / "residuals.csv")


def write_comparison(rows: Sequence[ModelComparison], directory: Path) -> list[Path]:
    frame = pd.DataFrame(
        {
            "model": [r.name for r in rows],
            "bandwidths": [" ".join(f"{h:g}" for h in r.bandwidths) for r in rows],
            "threshold": [r.threshold for r in rows],
            "fraction": [r.fraction for r in rows],
            "exceedances": [r.exceedances for r in rows],
            "discrepancy": [r.discrepancy for r in rows],
            "ks_exp": [r.ks_exp for r in rows],
        }
    )
    text = _env.from_string(_COMPARE_TEMPLATE).render(rows=rows)
    return [
        _write_frame(frame, directory / "comparison.csv"),
        _write_text(directory / "comparison.md", text),
    ]


def output_directory(path: str | os.PathLike[str]) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


__all__ = [
    "RunManifest",
    "grid_fit_frame",
    "mc_bands_frame",
    "mc_summary_frame",
    "outcomes_frame",
    "output_directory",
    "package_versions",
    "read_grid_fit",
    "write_comparison",
    "write_confidence_intervals",
    "write_grid_fit",
    "write_manifest",
    "write_mc_report",
    "write_outcomes",
    "write_qq",
    "write_residuals",
    "write_tuning",
]
