"""Conditional conformal risk control for filtering synthetic data augmentations."""

from .model import (
    ConfigError,
    DatasetError,
    FilterConfig,
    FilterDecision,
    SampleRecord,
    ScoredGeneration,
)
from .pipeline import Strategy, calibrate, apply_calibration, run_filter

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DatasetError",
    "FilterConfig",
    "FilterDecision",
    "SampleRecord",
    "ScoredGeneration",
    "Strategy",
    "apply_calibration",
    "calibrate",
    "run_filter",
    "__version__",
]
