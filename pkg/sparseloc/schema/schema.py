"""
Shared schema definitions for the localization pipeline.

Covers:
- Pipeline stage and window status enums
- Manifold column provenance tags
- Per-window stage outcomes
- Metrics report returned by the harness
"""

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


# =========================
# Enums
# =========================

class PipelineStage(str, Enum):
    SYNTHESIS = "synthesis"
    DETECTION = "detection"
    ROUGH_AOA = "rough_aoa"
    INITIALIZATION = "initialization"
    REFINEMENT = "refinement"
    LOCALIZATION = "localization"


class WindowStatus(str, Enum):
    OK = "ok"
    NO_DETECTIONS = "no_detections"
    NOTHING_TO_REFINE = "nothing_to_refine"
    NO_REFINABLE_SOURCES = "no_refinable_sources"


class TagKind(str, Enum):
    TRACKED = "tracked"  # source with a position estimate
    PENDING = "pending"  # source with a single bearing so far
    NEW = "new"  # gated candidate from the rough AOA stage


class DetectorKind(str, Enum):
    PROPOSED = "proposed"
    BINARY = "binary"
    GLRT = "glrt"
    SLD = "sld"


# =========================
# Column provenance
# =========================

class ColumnTag(BaseModel):
    """Provenance of one manifold column."""

    model_config = ConfigDict(frozen=True)

    kind: TagKind
    ident: int

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.ident}"

    @classmethod
    def new(cls, ident: int) -> "ColumnTag":
        return cls(kind=TagKind.NEW, ident=ident)


# =========================
# Window outcome
# =========================

class WindowOutcome(BaseModel):
    """Result of pushing one window through the stage chain."""

    window: int = Field(..., description="1-based window index")
    success: bool = Field(..., description="Whether every stage ran")
    status: WindowStatus = Field(default=WindowStatus.OK)
    stage: Optional[PipelineStage] = Field(
        default=None,
        description="Stage that stopped the chain, if any",
    )
    error: Optional[str] = Field(default=None, description="Error message if a stage stopped")
    data: Dict[str, Any] = Field(default_factory=dict, description="Per-window diagnostics")


# =========================
# Metrics
# =========================

class RuntimeStats(BaseModel):
    total_seconds: float = 0.0
    mean_window_seconds: float = 0.0
    detector_iterations: Optional[float] = None
    refiner_iterations: Optional[float] = None
    localizer_iterations: Optional[float] = None


class MetricsReport(BaseModel):
    """
    Monte-Carlo averaged metrics; list entries are indexed by window.

    RMSE entries are None where no source was matched in any trial.
    """

    trials: int
    windows: List[int]
    detected_aoa_counts: List[float]
    rough_aoa_counts: List[float]
    elevation_rmse_deg: List[Optional[float]]
    azimuth_rmse_deg: List[Optional[float]]
    localization_rmse_m: List[Optional[float]]
    noise_var_ratio: List[Optional[float]]
    inst_snr_error_db: List[Optional[float]]
    matched: List[int]
    missed: List[int]
    spurious: List[int]
    source_reliability: List[float]
    reliable_tracks: List[int] = Field(default_factory=list, description="Per trial, final window")
    status_counts: Dict[str, int] = Field(default_factory=dict)
    runtime: RuntimeStats = Field(default_factory=RuntimeStats)
