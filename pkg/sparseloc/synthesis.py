"""
Complex baseband synthesis of the sample blocks received by the moving array.

Y = sum_n a(theta_n, phi_n) s_n^T + V, with AOAs frozen at the window
midpoint while range, delay and path gain follow every sample instant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, DomainError
from .scene import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    Scene,
    SourceSet,
    array_position_at,
    window_midpoint,
    window_start,
)

logger = logging.getLogger("sparseloc.synthesis")

GainFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
PulseShape = Callable[[np.ndarray], np.ndarray]

_ANGLE_TOL = 1e-12


class Stream(IntEnum):
    """Independent random streams; keys are combined with seed and indices."""

    PULSES = 1
    NOISE = 2
    POSE = 3
    SOURCES = 4
    CALIBRATION = 5
    COMPARISON = 6


def rng_stream(seed: int, purpose: Stream, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(purpose), *(int(k) for k in keys)])


# ============================================================
# Geometry helpers
# ============================================================

def unit_direction(theta: float, phi: float) -> np.ndarray:
    """[sin(theta)cos(phi), sin(theta)sin(phi), cos(theta)]"""
    if not (-_ANGLE_TOL <= theta <= np.pi + _ANGLE_TOL):
        raise ArgumentError(f"elevation {theta} outside [0, pi]")
    if not (-_ANGLE_TOL <= phi <= 2.0 * np.pi + _ANGLE_TOL):
        raise ArgumentError(f"azimuth {phi} outside [0, 2pi]")
    return unit_directions(theta, phi)


def unit_directions(theta, phi) -> np.ndarray:
    """Vectorized unit_direction without range checks; result shape (..., 3)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(phi)], axis=-1)


def angles_of(direction) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Inverse of unit_directions: elevation in [0, pi], azimuth in [0, 2pi)."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(u[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(u[..., 1], u[..., 0]), 2.0 * np.pi)
    if theta.ndim == 0:
        return float(theta), float(phi)
    return theta, phi


def true_angles(sources: SourceSet, position) -> tuple[np.ndarray, np.ndarray]:
    """Per-source (theta, phi) seen from ``position``."""
    return angles_of(sources.positions - np.asarray(position, dtype=float))


def steering_vector(geom: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
    return steering_matrix(geom, unit_direction(theta, phi)[:, None])[:, 0]


def steering_matrix(geom: ArrayGeometry, directions: np.ndarray) -> np.ndarray:
    """exp(jK D^T U) for unit directions stacked as columns of U (3 x N)."""
    return np.exp(1j * geom.wave_number * (geom.element_offsets.T @ np.asarray(directions, dtype=float)))


def path_gain(
    distance,
    theta=0.0,
    phi=0.0,
    gain_fn: Optional[GainFn] = None,
    wave_number: float = 0.0,
):
    """G(theta, phi) / (sqrt(4 pi) R) * exp(-jKR)"""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise DomainError("path_gain needs R > 0")
    gain = 1.0 if gain_fn is None else gain_fn(np.asarray(theta), np.asarray(phi))
    beta = gain / (np.sqrt(4.0 * np.pi) * distance) * np.exp(-1j * wave_number * distance)
    return complex(beta) if beta.ndim == 0 else beta


# ============================================================
# Pulse trains
# ============================================================

def sine_pulse(duration: float, power: float = 3.0) -> PulseShape:
    """One sine period of mean power ``power`` (sqrt(6) sin for 3 W)."""
    amplitude = np.sqrt(2.0 * power)

    def shape(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        inside = (t >= 0.0) & (t < duration)
        return np.where(inside, amplitude * np.sin(2.0 * np.pi * t / duration), 0.0)

    return shape


@dataclass(frozen=True, eq=False)
class PulseTrain:
    start_times: np.ndarray
    pulse_duration: float
    pulse_shape: PulseShape

    def __len__(self) -> int:
        return len(self.start_times)

    def evaluate(self, t) -> np.ndarray:
        """s(t) = sum_j p(t - t_j)"""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for start in self.start_times:
            out = out + self.pulse_shape(t - start)
        return out


def sample_pulse_train(
    mean_inter_pulse: float,
    span: float,
    seed: int | np.random.Generator,
    start: float = 0.0,
    pulse_duration: float = 3e-6,
    pulse_shape: Optional[PulseShape] = None,
) -> PulseTrain:
    """Poisson arrivals of rate 1/T_avg over [start, start + span)."""
    if mean_inter_pulse <= 0:
        raise ArgumentError("mean_inter_pulse must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = pulse_shape or sine_pulse(pulse_duration)
    if span <= 0:
        return PulseTrain(np.empty(0), pulse_duration, shape)

    expected = span / mean_inter_pulse
    batch = int(expected + 10.0 * np.sqrt(expected) + 10)
    times = np.cumsum(rng.exponential(mean_inter_pulse, size=batch))
    while times[-1] < span:
        more = np.cumsum(rng.exponential(mean_inter_pulse, size=batch)) + times[-1]
        times = np.concatenate([times, more])
    times = times[times < span]
    return PulseTrain(start + times, pulse_duration, shape)


def scene_pulse_trains(scene: Scene, seed: int) -> list[PulseTrain]:
    """One train per source over the whole trajectory, independent of noise."""
    sources = scene.sources
    return [
        sample_pulse_train(
            sources.mean_inter_pulse,
            scene.trajectory.end_time,
            rng_stream(seed, Stream.PULSES, n),
            pulse_duration=float(sources.pulse_duration[n]),
            pulse_shape=sine_pulse(float(sources.pulse_duration[n]), float(sources.pulse_power[n])),
        )
        for n in range(sources.count)
    ]


# ============================================================
# Window synthesis
# ============================================================

@dataclass(frozen=True)
class NoiseModel:
    variance: float
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0 or not np.isfinite(self.variance):
            raise ArgumentError(f"noise variance must be finite and >= 0, got {self.variance}")


@dataclass(frozen=True, eq=False)
class ArrayPose:
    position: np.ndarray
    yaw: float = 0.0


@dataclass(frozen=True, eq=False)
class WindowCapture:
    """
    One window of received samples.

    ``array_pose`` is the pose reported to the processing chain; the true
    pose and, optionally, the clean and noise parts are kept for scoring.
    """

    samples: np.ndarray
    window_index: int
    midpoint_time: float
    array_pose: ArrayPose
    true_position: np.ndarray
    true_yaw: float = 0.0
    clean: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def signal_columns(self) -> np.ndarray:
        """Indices of columns carrying any source energy (needs components)."""
        if self.clean is None:
            raise ArgumentError("capture was synthesized without components")
        return np.flatnonzero(np.any(self.clean != 0, axis=0))


def sample_times(scene: Scene, i: int) -> np.ndarray:
    """t_g = t0 + (i - 1) T + g t_s for g = 1..G"""
    ts = 1.0 / scene.sample_rate
    return window_start(scene.trajectory, i) + ts * np.arange(1, scene.samples_per_window + 1)


def _source_samples(
    train: PulseTrain,
    times: np.ndarray,
    ranges: np.ndarray,
    wave_number: float,
    gain: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Delayed pulse envelope times per-sample path gain for one source."""
    arrival = times - ranges / SPEED_OF_LIGHT
    out = np.zeros(times.size, dtype=complex)
    starts = train.start_times
    starts = starts[(starts > arrival[0] - train.pulse_duration) & (starts <= arrival[-1])]
    for t_j in starts:
        lo = np.searchsorted(arrival, t_j, side="left")
        hi = np.searchsorted(arrival, t_j + train.pulse_duration, side="left")
        if hi > lo:
            out[lo:hi] += train.pulse_shape(arrival[lo:hi] - t_j)
    active = np.flatnonzero(out)
    if active.size:
        g = 1.0 if gain is None else gain[active]
        out[active] *= g * path_gain(ranges[active], wave_number=wave_number)
    return out


def synthesize_window(
    scene: Scene,
    noise: NoiseModel,
    i: int,
    pulse_seed: int = 0,
    keep_components: bool = False,
    pulse_trains: Optional[list[PulseTrain]] = None,
    gain_fn: Optional[GainFn] = None,
) -> WindowCapture:
    """
    Synthesize window ``i`` (1-based).

    Pulse times come from ``pulse_seed``; noise from ``noise.seed``; the two
    streams never share state.
    """
    traj = scene.trajectory
    sources = scene.sources
    t_mid = window_midpoint(traj, i)
    r_mid = array_position_at(traj, t_mid)
    times = sample_times(scene, i)
    r_t = array_position_at(traj, times)

    yaw = scene.yaw_error(i)
    physical = scene.geometry.rotated(yaw) if yaw else scene.geometry
    K = physical.wave_number
    M, G = physical.elements, times.size

    trains = pulse_trains if pulse_trains is not None else scene_pulse_trains(scene, pulse_seed)
    clean = np.zeros((M, G), dtype=complex)
    for n in range(sources.count):
        offset = sources.positions[n] - r_t
        ranges = np.linalg.norm(offset, axis=1)
        if np.any(ranges <= 0):
            raise DomainError(f"source {n} coincides with the array")
        gain = None
        if gain_fn is not None:
            theta_t, phi_t = angles_of(offset)
            gain = gain_fn(theta_t, phi_t)
        s_n = _source_samples(trains[n], times, ranges, K, gain)
        active = np.flatnonzero(s_n)
        if active.size == 0:
            continue
        u_mid = sources.positions[n] - r_mid
        a_n = steering_matrix(physical, (u_mid / np.linalg.norm(u_mid))[:, None])[:, 0]
        clean[:, active] += np.outer(a_n, s_n[active])

    if noise.variance > 0:
        rng = rng_stream(noise.seed, Stream.NOISE, i)
        scale = np.sqrt(noise.variance / 2.0)
        v = scale * (rng.standard_normal((M, G)) + 1j * rng.standard_normal((M, G)))
    else:
        v = np.zeros((M, G), dtype=complex)

    pose = ArrayPose(r_mid + scene.position_error(i), 0.0)
    logger.debug("Synthesized window %d (G=%d, sources=%d)", i, G, sources.count)
    return WindowCapture(
        samples=clean + v,
        window_index=i,
        midpoint_time=t_mid,
        array_pose=pose,
        true_position=r_mid,
        true_yaw=yaw,
        clean=clean if keep_components else None,
        noise=v if keep_components else None,
    )


def noise_variance_for_snr_star(sources: SourceSet, r0, snr_star_db: float) -> float:
    """sigma_v^2 = sum_n P_n / (4 pi R_n^2) / 10^(SNR*/10)"""
    ranges = np.linalg.norm(sources.positions - np.asarray(r0, dtype=float), axis=1)
    if np.any(ranges <= 0):
        raise DomainError("a source coincides with the receiver position")
    received = float(np.sum(sources.pulse_power / (4.0 * np.pi * ranges**2)))
    if np.isposinf(snr_star_db):
        return 0.0
    return received / 10.0 ** (snr_star_db / 10.0)
