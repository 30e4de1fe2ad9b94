"""
Synthetic environment: city height map, array geometry, receiver trajectory
and stationary source placement.

All types are immutable after construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigurationError, WindowIndexError

logger = logging.getLogger("sparseloc.scene")

SPEED_OF_LIGHT = 299_792_458.0


def _frozen(array: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ============================================================
# City map
# ============================================================

@dataclass(frozen=True, eq=False)
class CityMap:
    """Raster height map; grid rows run along y, columns along x."""

    grid: np.ndarray
    origin: np.ndarray
    cell_size: float

    def __post_init__(self):
        grid = _frozen(self.grid)
        if grid.ndim != 2 or grid.size == 0:
            raise ConfigurationError("CityMap grid must be a non-empty 2D array")
        if not np.all(np.isfinite(grid)) or np.any(grid < 0):
            raise ConfigurationError("CityMap heights must be finite and >= 0")
        if self.cell_size <= 0:
            raise ConfigurationError(f"cell_size must be > 0, got {self.cell_size}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "origin", _frozen(self.origin))

    @property
    def extent(self) -> tuple[float, float]:
        """(width along x, height along y) in meters."""
        ny, nx = self.grid.shape
        return nx * self.cell_size, ny * self.cell_size

    @property
    def relief(self) -> float:
        """Largest height difference on the map (worst-case z error)."""
        return float(self.grid.max() - self.grid.min())

    @property
    def is_flat(self) -> bool:
        return self.relief == 0.0

    @classmethod
    def flat(cls, extent: float, cell_size: float = 10.0, height: float = 0.0) -> "CityMap":
        n = max(int(round(extent / cell_size)), 1)
        return cls(
            grid=np.full((n, n), height),
            origin=np.array([-n * cell_size / 2.0] * 2),
            cell_size=cell_size,
        )

    def flattened(self) -> "CityMap":
        """Zero map with the same footprint."""
        return CityMap(grid=np.zeros_like(self.grid), origin=self.origin, cell_size=self.cell_size)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.grid.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.cell_size
        return xs, ys


def build_city_map(
    seed: int,
    extent: float,
    building_dims: tuple[float, float] = (10.0, 20.0),
    height_range: tuple[float, float] = (3.5, 20.0),
    cell_size: float = 1.0,
    street_width: tuple[float, float] = (6.0, 16.0),
    offset_fraction: float = 0.05,
) -> CityMap:
    """
    Rows of equal-footprint buildings separated by streets of random width.

    Ground cells sit at the low end of ``height_range``; every building gets
    a uniform height from the range plus a uniform offset of at most
    ``offset_fraction`` of the range width. The map is centered on the
    origin and is a pure function of its arguments.
    """
    if not np.isfinite(extent) or extent <= 0:
        raise ConfigurationError(f"extent must be > 0, got {extent}")
    lo, hi = height_range
    if not (0.0 <= lo <= hi <= 100.0):
        raise ConfigurationError(f"height_range must lie within [0, 100] with lo <= hi, got {height_range}")
    if cell_size <= 0 or cell_size > extent:
        raise ConfigurationError(f"cell_size must be in (0, extent], got {cell_size}")
    if min(building_dims) <= 0 or min(street_width) <= 0 or street_width[0] > street_width[1]:
        raise ConfigurationError("building_dims and street_width must be positive ranges")

    rng = np.random.default_rng(seed)
    n = int(round(extent / cell_size))
    grid = np.full((n, n), lo, dtype=float)
    delta = offset_fraction * (hi - lo)
    width_x, depth_y = building_dims

    def to_cell(v: float) -> int:
        return min(int(np.floor(v / cell_size)), n)

    y = rng.uniform(*street_width)
    while y < extent:
        y_end = min(y + depth_y, extent)
        profile = np.full(n, lo)
        x = rng.uniform(0.0, street_width[1])
        while x < extent:
            x_end = min(x + width_x, extent)
            h = rng.uniform(lo, hi) + rng.uniform(-delta, delta)
            profile[to_cell(x):to_cell(x_end)] = max(h, 0.0)
            x = x_end + rng.uniform(*street_width)
        grid[to_cell(y):to_cell(y_end), :] = profile
        y = y_end + rng.uniform(*street_width)

    logger.debug("Built %dx%d city map (seed=%d)", n, n, seed)
    return CityMap(grid=grid, origin=np.array([-n * cell_size / 2.0] * 2), cell_size=cell_size)


def height_at(city: CityMap, xy) -> float | np.ndarray:
    """Nearest-cell height; queries outside the map clamp to the boundary cell."""
    xy = np.asarray(xy, dtype=float)
    ny, nx = city.grid.shape
    ix = np.clip(np.floor((xy[..., 0] - city.origin[0]) / city.cell_size), 0, nx - 1).astype(np.int64)
    iy = np.clip(np.floor((xy[..., 1] - city.origin[1]) / city.cell_size), 0, ny - 1).astype(np.int64)
    heights = city.grid[iy, ix]
    if heights.ndim == 0:
        return float(heights)
    return heights


# ============================================================
# Array geometry
# ============================================================

@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Element offsets D (3 x M, meters) relative to the array center."""

    element_offsets: np.ndarray
    carrier_freq: float

    def __post_init__(self):
        offsets = _frozen(self.element_offsets)
        if offsets.ndim != 2 or offsets.shape[0] != 3 or offsets.shape[1] < 2:
            raise ConfigurationError(f"element_offsets must be 3 x M with M >= 2, got {offsets.shape}")
        if self.carrier_freq <= 0:
            raise ConfigurationError("carrier_freq must be > 0")
        object.__setattr__(self, "element_offsets", offsets)

    @property
    def elements(self) -> int:
        return self.element_offsets.shape[1]

    @property
    def wave_number(self) -> float:
        return 2.0 * np.pi * self.carrier_freq / SPEED_OF_LIGHT

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    def rotated(self, yaw: float) -> "ArrayGeometry":
        """Geometry rotated about z by ``yaw`` radians."""
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return ArrayGeometry(rot @ self.element_offsets, self.carrier_freq)


def uniform_circular_array(elements: int, radius: float, carrier_freq: float) -> ArrayGeometry:
    """Horizontal UCA; element m sits at azimuth 2*pi*m/M."""
    angles = 2.0 * np.pi * np.arange(elements) / elements
    offsets = np.vstack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(elements)])
    return ArrayGeometry(offsets, carrier_freq)


# ============================================================
# Trajectory
# ============================================================

@dataclass(frozen=True, eq=False)
class Trajectory:
    initial_position: np.ndarray
    velocity: np.ndarray
    start_time: float
    window_duration: float
    window_count: int

    def __post_init__(self):
        if self.window_duration <= 0:
            raise ConfigurationError("window_duration must be > 0")
        if self.window_count < 1:
            raise ConfigurationError("window_count must be >= 1")
        object.__setattr__(self, "initial_position", _frozen(self.initial_position))
        object.__setattr__(self, "velocity", _frozen(self.velocity))

    @property
    def end_time(self) -> float:
        return self.start_time + self.window_count * self.window_duration


def array_position_at(traj: Trajectory, t) -> np.ndarray:
    """r(t) = r0 + v t; ``t`` may be an array of instants (result is (..., 3))."""
    t = np.asarray(t, dtype=float)
    return traj.initial_position + np.multiply.outer(t, traj.velocity)


def window_start(traj: Trajectory, i: int) -> float:
    if not 1 <= i <= traj.window_count:
        raise WindowIndexError(i, traj.window_count)
    return traj.start_time + (i - 1) * traj.window_duration


def window_midpoint(traj: Trajectory, i: int) -> float:
    return window_start(traj, i) + traj.window_duration / 2.0


# ============================================================
# Sources
# ============================================================

@dataclass(frozen=True, eq=False)
class SourceSet:
    positions: np.ndarray  # (N, 3)
    pulse_duration: np.ndarray  # (N,)
    pulse_power: np.ndarray  # (N,)
    mean_inter_pulse: float

    def __post_init__(self):
        positions = _frozen(np.atleast_2d(self.positions))
        if positions.shape[1] != 3:
            raise ConfigurationError(f"source positions must be N x 3, got {positions.shape}")
        count = positions.shape[0]
        duration = _frozen(np.broadcast_to(self.pulse_duration, (count,)))
        power = _frozen(np.broadcast_to(self.pulse_power, (count,)))
        if np.any(duration <= 0) or np.any(power <= 0):
            raise ConfigurationError("pulse durations and powers must be > 0")
        if count and self.mean_inter_pulse <= duration.max():
            raise ConfigurationError("mean_inter_pulse must exceed every pulse_duration")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "pulse_duration", duration)
        object.__setattr__(self, "pulse_power", power)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def subset(self, indices) -> "SourceSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SourceSet(
            self.positions[indices],
            self.pulse_duration[indices],
            self.pulse_power[indices],
            self.mean_inter_pulse,
        )


def place_sources(
    city: CityMap,
    xy,
    pulse_duration: float = 3e-6,
    pulse_power: float = 3.0,
    mean_inter_pulse: float = 3e-3,
) -> SourceSet:
    """Snap planar positions onto the map surface."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))[:, :2]
    z = np.atleast_1d(height_at(city, xy))
    return SourceSet(np.column_stack([xy, z]), pulse_duration, pulse_power, mean_inter_pulse)


def sample_rooftop_sources(
    city: CityMap,
    count: int,
    seed: int,
    pulse_duration: float = 3e-6,
    pulse_power: float = 3.0,
    mean_inter_pulse: float = 3e-3,
) -> SourceSet:
    """Uniform positions over building cells (anywhere on a flat map)."""
    rng = np.random.default_rng(seed)
    roofs = np.argwhere(city.grid > city.grid.min())
    if roofs.size == 0:
        roofs = np.argwhere(np.ones_like(city.grid, dtype=bool))
    picks = roofs[rng.integers(0, len(roofs), size=count)]
    jitter = rng.uniform(0.0, 1.0, size=(count, 2))
    xy = city.origin + (picks[:, ::-1] + jitter) * city.cell_size
    return place_sources(city, xy, pulse_duration, pulse_power, mean_inter_pulse)


def sources_around(
    center,
    count: int,
    rng: np.random.Generator,
    range_m: tuple[float, float],
    theta_deg: tuple[float, float],
    pulse_duration: float = 3e-6,
    pulse_power: float = 3.0,
    mean_inter_pulse: float = 3e-3,
) -> SourceSet:
    """Sources at uniform (range, elevation, azimuth) around ``center``."""
    ranges = rng.uniform(*range_m, size=count)
    theta = np.radians(rng.uniform(*theta_deg, size=count))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
    dirs = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    positions = np.asarray(center, dtype=float) + ranges[:, None] * dirs
    return SourceSet(positions, pulse_duration, pulse_power, mean_inter_pulse)


# ============================================================
# Scene bundle
# ============================================================

@dataclass(frozen=True, eq=False)
class Scene:
    """Everything the synthesizer needs besides the noise model."""

    city: CityMap
    geometry: ArrayGeometry
    trajectory: Trajectory
    sources: SourceSet
    sample_rate: float
    yaw_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    position_errors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ArgumentError("sample_rate must be > 0")

    @property
    def samples_per_window(self) -> int:
        return int(np.floor(self.trajectory.window_duration * self.sample_rate + 1e-9))

    def yaw_error(self, i: int) -> float:
        return float(self.yaw_errors[i - 1]) if self.yaw_errors.size else 0.0

    def position_error(self, i: int) -> np.ndarray:
        return self.position_errors[i - 1] if self.position_errors.size else np.zeros(3)
