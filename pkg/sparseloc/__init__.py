"""
sparseloc: multi-source AOA localization from a moving antenna array.
"""

from .config import RunConfig
from .errors import (
    ArgumentError,
    CalibrationError,
    ConfigurationError,
    DomainError,
    FatalStageError,
    NoDetectionsError,
    NothingToRefineError,
    SparselocError,
    WindowIndexError,
)
from .logger import RunLogger
from .pipeline import heatmap_sweep, run_pipeline, simulate, summarize, synthesize_captures

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "RunLogger",
    # Errors
    "SparselocError",
    "ConfigurationError",
    "ArgumentError",
    "DomainError",
    "WindowIndexError",
    "NoDetectionsError",
    "NothingToRefineError",
    "CalibrationError",
    "FatalStageError",
    # Harness
    "run_pipeline",
    "simulate",
    "summarize",
    "heatmap_sweep",
    "synthesize_captures",
]
