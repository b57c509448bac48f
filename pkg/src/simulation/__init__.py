"""Synthetic settings and the Monte Carlo driver."""

from .generators import SimSetting, gen_dataset, sample_response
from .monte_carlo import McReport, TuningPolicy, run_monte_carlo

__all__ = [
    "McReport",
    "SimSetting",
    "TuningPolicy",
    "gen_dataset",
    "run_monte_carlo",
    "sample_response",
]
