"""Simulation laboratory: synthetic streams, Monte Carlo calibration, power studies."""

from .experiments import (
    Calibration,
    ExperimentResult,
    NotApplicable,
    calibrate_early_stop,
    calibrate_mc,
    hotelling_scan,
    k_sweep,
    power_at_early_stop,
    run_experiment,
)
from .generators import SimSpec, generate, rng_for
from .presets import PRESETS, run_preset

__all__ = [
    "Calibration",
    "ExperimentResult",
    "NotApplicable",
    "PRESETS",
    "SimSpec",
    "calibrate_early_stop",
    "calibrate_mc",
    "generate",
    "hotelling_scan",
    "k_sweep",
    "power_at_early_stop",
    "rng_for",
    "run_experiment",
    "run_preset",
]
