"""
Scoring against simulation truth.

Estimates are matched to truth greedily, closest pair first, within a
threshold; unmatched estimates count as spurious and unmatched truth as
missed. RMSE is taken over matched pairs only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .synthesis import unit_directions

logger = logging.getLogger("sparseloc.metrics")


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    wrapped = np.pi - np.mod(np.pi - x, 2.0 * np.pi)
    return float(wrapped) if wrapped.ndim == 0 else wrapped


def great_circle(theta_a, phi_a, theta_b, phi_b) -> np.ndarray:
    """Pairwise angular distance, shape (len(a), len(b))."""
    ua = unit_directions(np.atleast_1d(theta_a), np.atleast_1d(phi_a))
    ub = unit_directions(np.atleast_1d(theta_b), np.atleast_1d(phi_b))
    return np.arccos(np.clip(ua @ ub.T, -1.0, 1.0))


def greedy_match(cost: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Accept (row, col) pairs in order of increasing cost while both are free."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    order = np.argsort(cost, axis=None, kind="stable")
    rows, cols = np.unravel_index(order, cost.shape)
    used_r, used_c = set(), set()
    pairs = []
    for r, c in zip(rows, cols):
        if cost[r, c] > threshold:
            break
        if r in used_r or c in used_c:
            continue
        used_r.add(int(r))
        used_c.add(int(c))
        pairs.append((int(r), int(c)))
    return pairs


def rmse(values) -> Optional[float]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return None
    return float(np.sqrt(np.mean(values**2)))


# ============================================================
# Angles
# ============================================================

@dataclass(frozen=True)
class AngleMatch:
    """Matched (estimate, truth) index pairs with signed errors in radians."""

    pairs: list[tuple[int, int]] = field(default_factory=list)
    d_theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def restricted(self, truth_mask: np.ndarray) -> "AngleMatch":
        keep = [k for k, (_, j) in enumerate(self.pairs) if truth_mask[j]]
        return AngleMatch([self.pairs[k] for k in keep], self.d_theta[keep], self.d_phi[keep])


def match_angles(estimates, truth, threshold: float) -> AngleMatch:
    """``estimates`` (K, 2) and ``truth`` (N, 2) as (theta, phi) rows in radians."""
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    tru = np.asarray(truth, dtype=float).reshape(-1, 2)
    if est.shape[0] == 0 or tru.shape[0] == 0:
        return AngleMatch()
    pairs = greedy_match(great_circle(est[:, 0], est[:, 1], tru[:, 0], tru[:, 1]), threshold)
    if not pairs:
        return AngleMatch()
    e, t = np.array(pairs).T
    return AngleMatch(pairs, est[e, 0] - tru[t, 0], wrap_angle(est[e, 1] - tru[t, 1]))


def sufficient_detections(counts, fraction: float) -> np.ndarray:
    """Sources detected at least ``fraction`` times as often as the most detected one."""
    counts = np.asarray(counts, dtype=float)
    if counts.size == 0 or counts.max() == 0:
        return np.zeros(counts.size, dtype=bool)
    return counts >= fraction * counts.max()


def aoa_window_errors(
    estimates: Sequence,
    truth: Sequence,
    threshold: float,
    min_detection_fraction: float = 0.0,
) -> list[AngleMatch]:
    """Per-window matches, keeping only sources with sufficient detections."""
    matches = [match_angles(e, t, threshold) for e, t in zip(estimates, truth)]
    n_truth = max((np.asarray(t).reshape(-1, 2).shape[0] for t in truth), default=0)
    counts = np.zeros(n_truth)
    for m in matches:
        for _, j in m.pairs:
            counts[j] += 1
    eligible = sufficient_detections(counts, min_detection_fraction)
    return [m.restricted(eligible) for m in matches]


def aoa_rmse(
    estimates: Sequence,
    truth: Sequence,
    threshold: float,
    min_detection_fraction: float = 0.0,
) -> tuple[list[Optional[float]], list[Optional[float]]]:
    """(elevation, azimuth) RMSE per window in radians; None where nothing matched."""
    matches = aoa_window_errors(estimates, truth, threshold, min_detection_fraction)
    return [rmse(m.d_theta) for m in matches], [rmse(m.d_phi) for m in matches]


# ============================================================
# Positions
# ============================================================

@dataclass(frozen=True)
class PositionMatch:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    missed: int = 0
    spurious: int = 0

    @property
    def matched(self) -> int:
        return len(self.pairs)


def match_positions(estimates, truth, radius: float) -> PositionMatch:
    est = np.asarray(estimates, dtype=float).reshape(-1, 3)
    tru = np.asarray(truth, dtype=float).reshape(-1, 3)
    if est.shape[0] == 0 or tru.shape[0] == 0:
        return PositionMatch(missed=tru.shape[0], spurious=est.shape[0])
    dist = np.linalg.norm(est[:, None, :] - tru[None, :, :], axis=2)
    pairs = greedy_match(dist, radius)
    errors = np.array([dist[i, j] for i, j in pairs])
    return PositionMatch(pairs, errors, tru.shape[0] - len(pairs), est.shape[0] - len(pairs))


def localization_rmse(tracks: Sequence, truth, radius: float) -> tuple[list[Optional[float]], list[PositionMatch]]:
    """Per-window RMSE of matched track positions against the stationary truth."""
    matches = [match_positions(t, truth, radius) for t in tracks]
    return [rmse(m.errors) for m in matches], matches
