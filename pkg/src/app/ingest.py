"""CSV ingestion and covariate preprocessing for command-line runs."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from scipy import stats

from common.errors import FileNotFound, InvalidConfig, ParseError
from common.models import AffineMap, Dataset, rescale_t_to_unit_cube, validate_dataset

logger = logging.getLogger(__name__)


class ColumnMapping(BaseModel):
    """Which CSV columns hold the response and the two covariate groups."""

    response: str = Field(default="y", description="Response column")
    x_columns: list[str] = Field(default_factory=list, description="Linear covariate columns")
    t_columns: list[str] = Field(default_factory=list, description="Smoothing covariate columns")

    @model_validator(mode="after")
    def _disjoint(self) -> "ColumnMapping":
        names = [self.response, *self.x_columns, *self.t_columns]
        if len(set(names)) != len(names):
            raise ValueError(f"column roles overlap: {names}")
        return self


@dataclass(frozen=True, eq=False)
class IngestedData:
    dataset: Dataset
    maps: tuple[AffineMap, ...]


def normal_score_transform(
    column: Sequence[float] | np.ndarray, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """``Phi^-1((R - 3/8) / (n + 1/4))`` with ranks ``R`` of the jittered column.

    The jitter is uniform on ``(-e/2, e/2)`` with ``e`` half the smallest nonzero
    gap between distinct values, so it only breaks ties.
    """

    values = np.asarray(column, dtype=float).reshape(-1)
    n = values.shape[0]
    if n == 0:
        return values
    rng = rng or np.random.default_rng()
    gaps = np.diff(np.unique(values))
    eps = float(gaps.min()) / 2.0 if gaps.size else 1.0
    jittered = values + rng.uniform(-eps / 2.0, eps / 2.0, size=n)
    ranks = stats.rankdata(jittered, method="ordinal")
    return stats.norm.ppf((ranks - 0.375) / (n + 0.25))


def _numeric_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    raw = frame[name]
    parsed = pd.to_numeric(raw.str.strip(), errors="coerce")
    bad = parsed.isna().to_numpy()
    if bad.any():
        position = int(np.flatnonzero(bad)[0])
        raise ParseError(position + 1, name, raw.iloc[position])
    return parsed.to_numpy(dtype=float)


def ingest_csv(
    path: str | os.PathLike[str],
    mapping: ColumnMapping,
    *,
    normal_score: Sequence[str] = (),
    rng: Optional[np.random.Generator] = None,
) -> IngestedData:
    """Read a headed CSV into a validated dataset with t rescaled to [0, 1]^q.

    Rows are numbered from 1 (the first data row after the header) in parse errors.
    """

    csv_path = Path(path)
    if not csv_path.is_file():
        raise FileNotFound(f"input file {str(csv_path)!r} does not exist")
    frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False, skipinitialspace=True)
    missing = [
        name
        for name in (mapping.response, *mapping.x_columns, *mapping.t_columns)
        if name not in frame.columns
    ]
    if missing:
        raise InvalidConfig(f"columns {missing} not found in {csv_path.name}")
    unknown = [name for name in normal_score if name not in mapping.x_columns]
    if unknown:
        raise InvalidConfig(f"normal-score columns {unknown} are not x-columns")

    y = _numeric_column(frame, mapping.response)
    x = np.column_stack([_numeric_column(frame, c) for c in mapping.x_columns]) if mapping.x_columns else None
    t = np.column_stack([_numeric_column(frame, c) for c in mapping.t_columns]) if mapping.t_columns else None

    if normal_score and x is not None:
        rng = rng or np.random.default_rng()
        for name in normal_score:
            k = mapping.x_columns.index(name)
            x[:, k] = normal_score_transform(x[:, k], rng)
            logger.info("Applied normal score transform to %s", name)

    dataset = validate_dataset(
        Dataset(
            y=y,
            x=x,
            t=t,
            x_names=tuple(mapping.x_columns),
            t_names=tuple(mapping.t_columns),
        )
    )
    dataset, maps = rescale_t_to_unit_cube(dataset)
    for name, affine in zip(dataset.t_names, maps):
        logger.info(
            "Rescaled %s from [%.6g, %.6g] to [0, 1]",
            name,
            affine.low,
            affine.high,
            extra={"column": name},
        )
    logger.info(
        "Loaded %d rows from %s (p=%d, q=%d)", dataset.n, csv_path, dataset.p, dataset.q
    )
    return IngestedData(dataset=dataset, maps=maps)


__all__ = ["ColumnMapping", "IngestedData", "ingest_csv", "normal_score_transform"]
