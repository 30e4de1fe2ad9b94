"""
sparseloc Configuration Management

Unified configuration for the simulator: scene, radio front end, every
processing block, Monte-Carlo harness and outputs. Defaults describe the
full-size scenario; the packaged config.yaml scales scene size and trial
count down to desk scale.
"""

import math
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError

DEFAULT_SOURCE_XY: list[list[float]] = [
    [0.0, 50.0],
    [-13.0, -233.0],
    [66.0, -85.0],
    [53.33, -611.87],
    [-240.22, 357.43],
    [600.0, -300.0],
    [-300.0, -100.0],
    [520.0, 159.17],
    [-250.0, -550.0],
    [200.0, -300.0],
    [406.0, -36.0],
]


# ============================================================
# Scene
# ============================================================

class SceneConfig(BaseModel):
    """Procedural city height map"""

    seed: int = Field(default=7, ge=0)
    extent: float = Field(default=2000.0, gt=0)
    cell_size: float = Field(default=1.0, gt=0)
    building_dims: tuple[float, float] = (10.0, 20.0)
    height_range: tuple[float, float] = (3.5, 20.0)
    street_width: tuple[float, float] = (6.0, 16.0)
    offset_fraction: float = Field(default=0.05, ge=0, le=0.5)
    flat: bool = False  # zero map, no buildings

    @field_validator("height_range")
    @classmethod
    def _check_heights(cls, value: tuple[float, float]) -> tuple[float, float]:
        lo, hi = value
        if not (0.0 <= lo <= hi <= 100.0):
            raise ValueError(f"height_range must satisfy 0 <= lo <= hi <= 100, got {value}")
        return value

    @field_validator("building_dims", "street_width")
    @classmethod
    def _check_positive_pair(cls, value: tuple[float, float]) -> tuple[float, float]:
        if min(value) <= 0:
            raise ValueError(f"dimensions must be positive, got {value}")
        return value


class ArrayConfig(BaseModel):
    """Uniform circular array and sampling"""

    elements: int = Field(default=6, ge=2)
    radius: float = Field(default=0.2, gt=0)
    carrier_freq: float = Field(default=0.5e9, gt=0)
    sample_rate: float = Field(default=10e6, gt=0)


class TrajectoryConfig(BaseModel):
    """Linear receiver motion and window layout"""

    initial_position: tuple[float, float, float] = (27.0, 11.0, 500.0)
    velocity: tuple[float, float, float] = (44.0, 33.0, 0.0)
    start_time: float = Field(default=0.1, ge=0)
    window_duration: float = Field(default=0.03, gt=0)
    window_count: int = Field(default=10, ge=1)


class SourceConfig(BaseModel):
    """Stationary pulsed emitters"""

    placement: Literal["table", "rooftop"] = "table"
    positions: list[list[float]] = Field(default_factory=lambda: [list(p) for p in DEFAULT_SOURCE_XY])
    count: int = Field(default=11, ge=1)  # rooftop placement only
    pulse_duration: float = Field(default=3e-6, gt=0)
    pulse_power: float = Field(default=3.0, gt=0)
    mean_inter_pulse: float = Field(default=3e-3, gt=0)

    @model_validator(mode="after")
    def _check_sources(self) -> "SourceConfig":
        if self.mean_inter_pulse <= self.pulse_duration:
            raise ValueError("mean_inter_pulse must exceed pulse_duration")
        if self.placement == "table" and not self.positions:
            raise ValueError("table placement needs at least one position")
        for p in self.positions:
            if len(p) not in (2, 3):
                raise ValueError(f"source position must be [x, y] or [x, y, z], got {p}")
        return self


class NoiseConfig(BaseModel):
    snr_star_db: float = 20.0
    enabled: bool = True


# ============================================================
# Processing blocks
# ============================================================

class DetectorConfig(BaseModel):
    """Energy detector"""

    p0: float = Field(default=1e-3, gt=0, lt=1)
    diff_max: int = Field(default=20, ge=1)
    l_adj: int = Field(default=5, ge=2)
    max_iters: int = Field(default=10, ge=1)


class RoughAoaConfig(BaseModel):
    """Covariance, MDL and 2D-MUSIC front end"""

    grid_step_deg: float = Field(default=1.0, gt=0, le=30)
    theta_range_deg: tuple[float, float] = (90.0, 180.0)  # lower hemisphere: a planar array mirrors theta about 90 deg
    eig_floor: float = Field(default=1e-30, gt=0)
    eig_rel_floor: float = Field(default=1e-12, ge=0, lt=1)

    @field_validator("theta_range_deg")
    @classmethod
    def _check_theta(cls, value: tuple[float, float]) -> tuple[float, float]:
        lo, hi = value
        if not (0.0 <= lo < hi <= 180.0):
            raise ValueError(f"theta_range_deg must satisfy 0 <= lo < hi <= 180, got {value}")
        return value


class RefinerConfig(BaseModel):
    """Closed-loop manifold refinement"""

    enabled: bool = True  # false = MUSIC-only open loop
    eps_aoa: float = Field(default=1e-4, gt=0)
    max_iters: int = Field(default=20, ge=1)
    l_max: int = Field(default=3, ge=1)
    eps_phi: float = Field(default=math.pi / 10, gt=0, lt=math.pi / 2)
    diff_max: int = Field(default=20, ge=1)
    l_adj: int = Field(default=5, ge=2)
    polish: bool = True
    epsilon_model: Optional[str] = None  # None = cached calibration for this array
    model_cache_dir: Optional[str] = None  # None = ~/.sparseloc/cache
    column_chunk: int = Field(default=512, ge=1)


class LocalizerConfig(BaseModel):
    eps_loc: float = Field(default=1e-2, gt=0)
    max_iters: int = Field(default=15, ge=1)
    z_init: float = 0.0


class TrackerConfig(BaseModel):
    xi: float = Field(default=math.cos(math.radians(10.0)), gt=0, lt=1)
    death_time: float = Field(default=0.3, gt=0)


class ImperfectionConfig(BaseModel):
    """Receiver pose and map imperfections"""

    position_error: bool = False
    position_sd: float = Field(default=5.0, ge=0)
    yaw_error: bool = False
    yaw_sd_deg: float = Field(default=5.0, ge=0)
    drop_map: bool = False


# ============================================================
# Harness
# ============================================================

class MetricsConfig(BaseModel):
    angle_threshold_deg: float = Field(default=5.0, gt=0)
    position_radius: float = Field(default=50.0, gt=0)
    min_detection_fraction: float = Field(default=0.5, ge=0, le=1)
    reliability_threshold: float = Field(default=0.5, ge=0, le=1)


class MonteCarloConfig(BaseModel):
    trials: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)


class HeatmapConfig(BaseModel):
    """Single-source RMSE sweep over the map"""

    x_range: tuple[float, float] = (-600.0, 600.0)
    y_range: tuple[float, float] = (-600.0, 600.0)
    step: float = Field(default=200.0, gt=0)
    trials: int = Field(default=2, ge=1)
    window_count: int = Field(default=5, ge=1)
    snr_star_db: float = 5.0


class CalibrationConfig(BaseModel):
    """Epsilon-model calibration"""

    trials: int = Field(default=20, ge=1)
    n_values: list[int] = Field(default_factory=lambda: list(range(2, 12)))
    gamma_db_min: float = 2.0
    gamma_db_max: float = 21.0
    gamma_db_step: float = Field(default=1.0, gt=0)
    columns: int = Field(default=1000, ge=10)
    realizations: int = Field(default=10, ge=1)
    l_max: int = Field(default=3, ge=1)  # kept equal to refiner.l_max by the callers
    f_grid_log10: tuple[float, float, int] = (-4.0, 1.0, 61)
    min_surviving: int = Field(default=3, ge=1)
    seed: int = Field(default=0, ge=0)

    @field_validator("n_values")
    @classmethod
    def _check_n(cls, value: list[int]) -> list[int]:
        if not value or min(value) < 2 or len(set(value)) != len(value):
            raise ValueError("n_values must be distinct integers >= 2")
        return sorted(value)

    @model_validator(mode="after")
    def _check_grid(self) -> "CalibrationConfig":
        if self.gamma_db_max <= self.gamma_db_min:
            raise ValueError("gamma_db_max must exceed gamma_db_min")
        return self

    def gamma_grid_db(self) -> list[float]:
        count = int(round((self.gamma_db_max - self.gamma_db_min) / self.gamma_db_step)) + 1
        return [self.gamma_db_min + k * self.gamma_db_step for k in range(count)]


class ComparisonConfig(BaseModel):
    """Detector false-detection comparison scenario"""

    sources: int = Field(default=11, ge=1)
    range_m: tuple[float, float] = (500.0, 2000.0)
    theta_deg: tuple[float, float] = (130.0, 180.0)
    configurations: int = Field(default=5, ge=1)
    realizations: int = Field(default=2, ge=1)
    snr_grid_db: list[float] = Field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    mean_inter_pulse: list[float] = Field(default_factory=lambda: [3e-3])
    l_adj: int = Field(default=10, ge=2)
    diff_max: int = Field(default=5, ge=1)
    binary_n: int = Field(default=2, ge=1)
    seed: int = Field(default=0, ge=0)


class OutputConfig(BaseModel):
    directory: str = "./runs"
    plots: bool = True
    log_dir: Optional[str] = None
    capture_csv_max_columns: int = Field(default=2000, ge=0)


# ============================================================
# Main Config
# ============================================================

class RunConfig(BaseModel):
    """sparseloc main configuration"""

    scene: SceneConfig = Field(default_factory=SceneConfig)
    array: ArrayConfig = Field(default_factory=ArrayConfig)
    trajectory: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    sources: SourceConfig = Field(default_factory=SourceConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    rough_aoa: RoughAoaConfig = Field(default_factory=RoughAoaConfig)
    refiner: RefinerConfig = Field(default_factory=RefinerConfig)
    localizer: LocalizerConfig = Field(default_factory=LocalizerConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    imperfections: ImperfectionConfig = Field(default_factory=ImperfectionConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    monte_carlo: MonteCarloConfig = Field(default_factory=MonteCarloConfig)
    heatmap: HeatmapConfig = Field(default_factory=HeatmapConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    comparison: ComparisonConfig = Field(default_factory=ComparisonConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    # --------------------------
    # Loading
    # --------------------------

    @classmethod
    def load(cls, filename: str = "config.yaml") -> "RunConfig":
        config_path = cls.find_config_file(filename)
        if config_path is None:
            raise FileNotFoundError(
                f"Configuration file {filename} not found. "
                "Place it in sparseloc/config/, ~/.sparseloc/config/, "
                "or the package config directory."
            )
        return cls.from_yaml(config_path)

    @classmethod
    def from_yaml(cls, config_path: str | Path) -> "RunConfig":
        config_path = Path(config_path)
        if not config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        with open(config_path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{config_path}: top level must be a mapping")

        return cls.from_dict(data, source=str(config_path))

    @classmethod
    def from_dict(cls, data: dict[str, Any], source: str = "<dict>") -> "RunConfig":
        unknown = set(data) - set(cls.model_fields)
        if unknown:
            raise ConfigurationError(f"{source}: unknown section(s) {sorted(unknown)}")
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"{source}: {e}") from e

    def to_yaml(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.model_dump(mode="json"), f, sort_keys=False)
        return path

    # --------------------------
    # Overrides
    # --------------------------

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` assignments; values parse as YAML scalars."""
        data = self.model_dump(mode="json")
        for item in assignments:
            if "=" not in item:
                raise ConfigurationError(f"Override '{item}' is not of the form key=value")
            dotted, raw = item.split("=", 1)
            keys = dotted.strip().split(".")
            node = data
            for key in keys[:-1]:
                if not isinstance(node, dict) or key not in node:
                    raise ConfigurationError(f"Unknown config key '{dotted}'")
                node = node[key]
            if not isinstance(node, dict) or keys[-1] not in node:
                raise ConfigurationError(f"Unknown config key '{dotted}'")
            node[keys[-1]] = yaml.safe_load(raw)
        return self.from_dict(data, source="overrides")

    # --------------------------
    # Config discovery
    # --------------------------

    @staticmethod
    def get_package_dir() -> Path:
        return Path(__file__).parent

    @classmethod
    def find_config_file(cls, filename: str) -> Optional[Path]:
        candidates = [
            Path.cwd() / "sparseloc" / "config" / filename,
            Path.home() / ".sparseloc" / "config" / filename,
            cls.get_package_dir() / "config" / filename,
        ]
        for path in candidates:
            if path.exists():
                return path
        return None

    @classmethod
    def get_default_config_path(cls) -> Path:
        return cls.find_config_file("config.yaml") or (
            cls.get_package_dir() / "config" / "config.yaml"
        )
