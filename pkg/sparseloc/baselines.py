"""
Reference detectors and the false-detection comparison.

Each detector reduces a column to a scalar statistic and declares a
detection when the statistic clears a threshold. Thresholds are matched so
every detector outputs as many columns as the energy detector keeps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .config import ComparisonConfig, DetectorConfig, RunConfig
from .detector import detect
from .errors import ArgumentError
from .scene import (
    CityMap,
    Scene,
    Trajectory,
    array_position_at,
    sources_around,
    uniform_circular_array,
    window_midpoint,
)
from .schema import DetectorKind
from .synthesis import NoiseModel, Stream, noise_variance_for_snr_star, rng_stream, synthesize_window

logger = logging.getLogger("sparseloc.baselines")


# ============================================================
# Statistics
# ============================================================

def log_i0(x):
    """ln I0(x) for x >= 0 without overflow."""
    x = np.abs(np.asarray(x, dtype=float))
    return np.log(special.i0e(x)) + x


def binary_statistic(block, n: int) -> np.ndarray:
    """n-th largest |y_k| per column; count(|y_k| > T) >= n iff statistic > T."""
    Y = np.abs(np.asarray(block, dtype=complex).reshape(np.shape(block)[0], -1))
    if not 1 <= n <= Y.shape[0]:
        raise ArgumentError(f"n must lie in 1..{Y.shape[0]}, got {n}")
    return -np.sort(-Y, axis=0)[n - 1]


def glrt_statistic(block, snr: float, noise_var: float) -> np.ndarray:
    """sum_k ln I0(2 sqrt(snr / noise_var) |y_k|)"""
    if snr <= 0 or noise_var <= 0:
        raise ArgumentError("GLRT needs snr > 0 and noise_var > 0")
    Y = np.abs(np.asarray(block, dtype=complex).reshape(np.shape(block)[0], -1))
    return log_i0(2.0 * np.sqrt(snr / noise_var) * Y).sum(axis=0)


def sld_statistic(block) -> np.ndarray:
    Y = np.asarray(block, dtype=complex).reshape(np.shape(block)[0], -1)
    return np.sum(np.abs(Y) ** 2, axis=0)


# ============================================================
# Single-column decisions
# ============================================================

def binary_detector(column, threshold: float, n: int) -> bool:
    return bool(binary_statistic(column, n)[0] > threshold)


def glrt_detector(column, threshold: float, snr: float, noise_var: float) -> bool:
    return bool(glrt_statistic(column, snr, noise_var)[0] >= threshold)


def sld_detector(column, threshold: float) -> bool:
    return bool(sld_statistic(column)[0] >= threshold)


# ============================================================
# Output-size matching
# ============================================================

@dataclass(frozen=True)
class ThresholdMatch:
    threshold: float
    achieved: int
    exact: bool


def _count(statistics: np.ndarray, threshold: float, strict: bool) -> int:
    return int(np.count_nonzero(statistics > threshold if strict else statistics >= threshold))


def match_output_size(statistics, n_out: int, strict: bool = False) -> ThresholdMatch:
    """
    Threshold keeping exactly ``n_out`` columns, placed midway between the
    n_out-th and (n_out+1)-th largest statistics. When ties make that
    impossible the nearest achievable count is returned with exact=False.
    """
    s = -np.sort(-np.asarray(statistics, dtype=float))
    G = s.size
    if not 0 <= n_out <= G:
        raise ArgumentError(f"n_out must lie in 0..{G}, got {n_out}")

    if G == 0:
        return ThresholdMatch(0.0, 0, True)
    if n_out == 0:
        threshold = float(s[0]) if strict else float(np.nextafter(s[0], np.inf))
    elif n_out == G:
        threshold = float(np.nextafter(s[-1], -np.inf)) if strict else float(s[-1])
    elif s[n_out - 1] > s[n_out]:
        threshold = float(s[n_out - 1] + (s[n_out] - s[n_out - 1]) / 2.0)
    else:
        tied = s[n_out - 1]
        above = float(np.nextafter(tied, np.inf))
        below = float(np.nextafter(tied, -np.inf))
        options = [(t, _count(s, t, strict)) for t in (above, below)]
        threshold = min(options, key=lambda o: (abs(o[1] - n_out), o[1]))[0]

    achieved = _count(s, threshold, strict)
    if achieved != n_out:
        logger.debug("Ties: requested %d output columns, matched %d", n_out, achieved)
    return ThresholdMatch(threshold, achieved, achieved == n_out)


# ============================================================
# Comparison
# ============================================================

@dataclass(frozen=True)
class ComparisonRow:
    detector: DetectorKind
    snr_star_db: float
    mean_inter_pulse: float
    n_in_sig: float
    n_out: float
    p_false: Optional[float]


def _false_fraction(selected: np.ndarray, signal: np.ndarray) -> tuple[int, int]:
    return int(np.count_nonzero(~np.isin(selected, signal))), int(selected.size)


def comparison_scene(run_cfg: RunConfig, configuration: int, mean_inter_pulse: float) -> Scene:
    """One stationary-source layout around the array for the comparison."""
    cmp = run_cfg.comparison
    traj_cfg = run_cfg.trajectory
    trajectory = Trajectory(
        np.asarray(traj_cfg.initial_position, dtype=float),
        np.asarray(traj_cfg.velocity, dtype=float),
        traj_cfg.start_time,
        traj_cfg.window_duration,
        1,
    )
    center = array_position_at(trajectory, window_midpoint(trajectory, 1))
    sources = sources_around(
        center,
        cmp.sources,
        rng_stream(cmp.seed, Stream.COMPARISON, configuration),
        cmp.range_m,
        cmp.theta_deg,
        pulse_duration=run_cfg.sources.pulse_duration,
        pulse_power=run_cfg.sources.pulse_power,
        mean_inter_pulse=mean_inter_pulse,
    )
    geometry = uniform_circular_array(run_cfg.array.elements, run_cfg.array.radius, run_cfg.array.carrier_freq)
    return Scene(CityMap.flat(10.0), geometry, trajectory, sources, run_cfg.array.sample_rate)


def compare_detectors(run_cfg: RunConfig) -> list[ComparisonRow]:
    """
    False-detection probability of every detector at the energy detector's
    output size, pooled over layouts and noise realizations.
    """
    cmp: ComparisonConfig = run_cfg.comparison
    det_cfg = DetectorConfig(
        p0=run_cfg.detector.p0,
        diff_max=cmp.diff_max,
        l_adj=cmp.l_adj,
        max_iters=run_cfg.detector.max_iters,
    )
    rows: list[ComparisonRow] = []

    for mip_index, mean_inter_pulse in enumerate(cmp.mean_inter_pulse):
        scenes = [comparison_scene(run_cfg, c, mean_inter_pulse) for c in range(cmp.configurations)]
        for snr_index, snr_db in enumerate(cmp.snr_grid_db):
            tallies = {kind: [0, 0] for kind in DetectorKind}
            n_in_sig = n_out_total = 0
            windows = 0

            for c, scene in enumerate(scenes):
                r0 = scene.trajectory.initial_position
                noise_var = noise_variance_for_snr_star(scene.sources, r0, snr_db)
                for r in range(cmp.realizations):
                    keys = rng_stream(cmp.seed, Stream.COMPARISON, mip_index, snr_index, c, r).integers(2**31, size=2)
                    capture = synthesize_window(
                        scene,
                        NoiseModel(noise_var, seed=int(keys[0])),
                        1,
                        pulse_seed=int(keys[1]),
                        keep_components=True,
                    )
                    signal = capture.signal_columns()
                    detection = detect(capture.samples, det_cfg)
                    n_out = detection.kept_count
                    windows += 1
                    n_in_sig += signal.size
                    n_out_total += n_out

                    statistics: dict[DetectorKind, tuple[np.ndarray, bool]] = {
                        DetectorKind.BINARY: (binary_statistic(capture.samples, cmp.binary_n), True),
                        DetectorKind.GLRT: (glrt_statistic(capture.samples, 10.0 ** (snr_db / 10.0), noise_var), False),
                        DetectorKind.SLD: (sld_statistic(capture.samples), False),
                    }
                    selections: dict[DetectorKind, np.ndarray] = {DetectorKind.PROPOSED: detection.kept_indices}
                    for kind, (stat, strict) in statistics.items():
                        match = match_output_size(stat, n_out, strict)
                        selections[kind] = np.flatnonzero(stat > match.threshold if strict else stat >= match.threshold)

                    for kind, selected in selections.items():
                        false, total = _false_fraction(selected, signal)
                        tallies[kind][0] += false
                        tallies[kind][1] += total

            for kind in DetectorKind:
                false, total = tallies[kind]
                rows.append(ComparisonRow(
                    detector=kind,
                    snr_star_db=float(snr_db),
                    mean_inter_pulse=float(mean_inter_pulse),
                    n_in_sig=n_in_sig / windows,
                    n_out=n_out_total / windows,
                    p_false=false / total if total else None,
                ))
            logger.info("Compared detectors at SNR*=%.1f dB (T_avg=%.2g s)", snr_db, mean_inter_pulse)
    return rows

