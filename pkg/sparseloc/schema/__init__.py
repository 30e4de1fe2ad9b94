"""
Schema definitions for the localization pipeline.
"""

from .schema import (
    # Enums
    PipelineStage,
    WindowStatus,
    TagKind,
    DetectorKind,

    # Provenance
    ColumnTag,

    # Outcomes / metrics
    WindowOutcome,
    RuntimeStats,
    MetricsReport,
)

__all__ = [
    # Enums
    "PipelineStage",
    "WindowStatus",
    "TagKind",
    "DetectorKind",

    # Provenance
    "ColumnTag",

    # Outcomes / metrics
    "WindowOutcome",
    "RuntimeStats",
    "MetricsReport",
]
