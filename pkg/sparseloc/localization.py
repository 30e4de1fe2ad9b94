"""
Source localization from bearings taken along the trajectory.

- AnchorSummary: running normal equations of the bearing lines
- gp_solve: alternating closed-form xy solve and map-height projection
- TrackerState: direction-to-source assignment, reliability and expiry
- Worst-case RMSE analysis of the map-height approximation
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import LocalizerConfig, TrackerConfig
from .errors import ArgumentError
from .manifold import DirectionBank, directions_to_estimates
from .scene import CityMap, height_at
from .schema import ColumnTag, TagKind
from .synthesis import unit_directions

logger = logging.getLogger("sparseloc.localization")

_UNIT_TOL = 1e-9


def _unit(u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(3)
    if abs(np.linalg.norm(u) - 1.0) > _UNIT_TOL:
        raise ArgumentError(f"direction must be a unit vector, got norm {np.linalg.norm(u):.6g}")
    return u


def line_distance_sq(w, r, u) -> float:
    """Squared distance from ``w`` to the line through ``r`` along ``u``."""
    u = _unit(u)
    d = np.asarray(w, dtype=float) - np.asarray(r, dtype=float)
    return max(float(d @ d - (d @ u) ** 2), 0.0)


def sum_square(w, anchors: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    return sum(line_distance_sq(w, r, u) for r, u in anchors)


# ============================================================
# Anchor summary
# ============================================================

@dataclass(frozen=True, eq=False)
class AnchorSummary:
    C: np.ndarray
    h: np.ndarray
    b: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls) -> "AnchorSummary":
        return cls(np.zeros((2, 2)), np.zeros(2), np.zeros(2), 0)

    @classmethod
    def from_anchors(cls, anchors: Sequence[tuple[np.ndarray, np.ndarray]]) -> "AnchorSummary":
        """Batch construction from (r, u) pairs."""
        if not anchors:
            return cls.empty()
        rs = np.array([np.asarray(r, dtype=float) for r, _ in anchors])
        us = np.array([_unit(u) for _, u in anchors])
        F = np.eye(3)[None] - us[:, :, None] * us[:, None, :]
        return cls(
            C=F[:, :2, :2].sum(axis=0),
            h=np.einsum("kij,kj->i", F[:, :2, :], rs),
            b=F[:, :2, 2].sum(axis=0),
            count=len(anchors),
        )


def accumulate_anchor(summary: AnchorSummary, r, u) -> AnchorSummary:
    u = _unit(u)
    F = np.eye(3) - np.outer(u, u)
    return AnchorSummary(
        C=summary.C + F[:2, :2],
        h=summary.h + F[:2, :] @ np.asarray(r, dtype=float),
        b=summary.b + F[:2, 2],
        count=summary.count + 1,
    )


# ============================================================
# Gradient-projection solve
# ============================================================

@dataclass(frozen=True)
class GpSolution:
    position: np.ndarray
    iterations: int
    converged: bool
    diverged: bool = False


def gp_solve(summary: AnchorSummary, city: CityMap, cfg: LocalizerConfig | None = None) -> GpSolution:
    """
    w' = C^+ (h - b z), z = map(w'), from z = z_init.

    Stops once successive estimates move by at most eps_loc; the first
    solve has no predecessor, so a flat map stops on iteration 2.
    """
    cfg = cfg or LocalizerConfig()
    if summary.count < 1:
        raise ArgumentError("gp_solve needs at least one anchor")

    C_pinv = np.linalg.pinv(summary.C)
    z = cfg.z_init
    previous: Optional[np.ndarray] = None
    step = np.inf
    iteration = 0
    for iteration in range(1, cfg.max_iters + 1):
        xy = C_pinv @ (summary.h - summary.b * z)
        z = height_at(city, xy)
        current = np.array([xy[0], xy[1], z])
        if previous is not None:
            step = float(np.linalg.norm(current - previous))
            if step <= cfg.eps_loc:
                return GpSolution(current, iteration, True)
        previous = current

    diverged = step > 10.0 * cfg.eps_loc
    if diverged:
        logger.warning("Localizer did not settle: last step %.3g m after %d iterations", step, iteration)
    return GpSolution(previous, iteration, False, diverged)


# ============================================================
# Multi-source tracker
# ============================================================

@dataclass
class SourceTrack:
    ident: int
    summary: AnchorSummary
    last_dir: np.ndarray
    last_seen: float
    hist: int = 1
    position: Optional[np.ndarray] = None
    reliability: float = 0.0
    solve_iterations: int = 0

    @property
    def pending(self) -> bool:
        return self.position is None

    def reference_direction(self, r_i) -> np.ndarray:
        """Direction toward the position estimate, or the last bearing while pending."""
        if self.position is not None:
            dirs, used = directions_to_estimates(self.position, r_i)
            if used.size:
                return dirs[:, 0]
        return self.last_dir


@dataclass
class TrackerState:
    death_time: float
    tracks: dict[int, SourceTrack] = field(default_factory=dict)
    processed_windows: int = 0
    next_id: int = 0
    start_time: Optional[float] = None
    epoch: int = 0

    @classmethod
    def from_config(cls, cfg: TrackerConfig) -> "TrackerState":
        return cls(death_time=cfg.death_time)

    def active(self) -> list[SourceTrack]:
        return [t for t in self.tracks.values() if not t.pending]

    def reliable(self, threshold: float) -> list[SourceTrack]:
        return [t for t in self.active() if t.reliability > threshold]

    def _advance_clock(self, t: float):
        if self.start_time is None:
            self.start_time = t
        epoch = int(np.floor((t - self.start_time) / self.death_time))
        if epoch > self.epoch:
            logger.debug("Reliability epoch %d: resetting counters", epoch)
            for track in self.tracks.values():
                track.hist = 0
            self.processed_windows = 0
            self.epoch = epoch

        expired = [k for k, track in self.tracks.items() if t - track.last_seen > self.death_time]
        for k in expired:
            del self.tracks[k]
        if expired:
            logger.info("Dropped %d idle track(s)", len(expired))
        self.processed_windows += 1

    def _spawn(self, r_i, u, t: float) -> SourceTrack:
        track = SourceTrack(self.next_id, accumulate_anchor(AnchorSummary.empty(), r_i, u), u, t)
        self.tracks[track.ident] = track
        self.next_id += 1
        return track


def assign_and_update(
    state: TrackerState,
    directions: np.ndarray,
    r_i,
    t: float,
    city: CityMap,
    xi: float,
    loc_cfg: LocalizerConfig | None = None,
) -> TrackerState:
    """
    Fold one window's bearings (3 x K) into the tracker.

    A bearing joins the track whose reference direction it matches best when
    that match is at least ``xi``; a track takes only its best bearing per
    window and the others open new pending tracks. Called once per window,
    with K = 0 for windows that produced nothing.
    """
    directions = np.asarray(directions, dtype=float).reshape(3, -1)
    state._advance_clock(t)

    tracks = list(state.tracks.values())
    claims: dict[int, tuple[float, int]] = {}
    unclaimed: list[int] = []
    if tracks and directions.shape[1]:
        refs = np.column_stack([tr.reference_direction(r_i) for tr in tracks])
        dots = np.abs(directions.T @ refs)
        for k in range(directions.shape[1]):
            j = int(np.argmax(dots[k]))
            if dots[k, j] < xi:
                unclaimed.append(k)
            elif j not in claims or dots[k, j] > claims[j][0]:
                if j in claims:
                    unclaimed.append(claims[j][1])
                claims[j] = (float(dots[k, j]), k)
            else:
                unclaimed.append(k)
    else:
        unclaimed = list(range(directions.shape[1]))

    for j, (_, k) in claims.items():
        track = tracks[j]
        u = directions[:, k]
        track.summary = accumulate_anchor(track.summary, r_i, u)
        track.last_dir = u
        track.last_seen = t
        track.hist += 1
        if track.summary.count >= 2:
            solution = gp_solve(track.summary, city, loc_cfg)
            track.position = solution.position
            track.solve_iterations = solution.iterations

    for k in sorted(unclaimed):
        state._spawn(r_i, directions[:, k], t)

    for track in state.tracks.values():
        track.reliability = track.hist / state.processed_windows if state.processed_windows else 0.0
    return state


def bank_from_tracker(state: TrackerState, r_i) -> DirectionBank:
    """Known directions seen from ``r_i``: toward estimates, or last bearings for pending tracks."""
    dirs, tags = [], []
    for track in state.tracks.values():
        dirs.append(track.reference_direction(r_i))
        kind = TagKind.PENDING if track.pending else TagKind.TRACKED
        tags.append(ColumnTag(kind=kind, ident=track.ident))
    if not dirs:
        return DirectionBank()
    return DirectionBank(np.column_stack(dirs), tuple(tags))


# ============================================================
# Worst-case error of the map-height approximation
# ============================================================

@dataclass(frozen=True)
class WorstCase:
    norm2_cb: float
    max_norm2_cb: float
    e_max: float
    unbounded: bool = False


def _check_elevation(theta: float):
    if not 0.0 <= theta <= np.pi / 2:
        raise ArgumentError(f"elevation must lie in [0, pi/2], got {theta}")


def two_anchor_norm2_cb(theta: float, dphi: float) -> float:
    """||C^+ b||^2 built directly from two bearings with azimuths 0 and dphi."""
    us = unit_directions(np.array([theta, theta]), np.array([0.0, dphi]))
    summary = AnchorSummary.from_anchors([(np.zeros(3), us[0]), (np.zeros(3), us[1])])
    v = np.linalg.pinv(summary.C) @ summary.b
    return float(v @ v)


def norm2_cb_closed_form(theta: float, dphi: float) -> float:
    """sin^2 cos^2 * 2(1 + cos dphi) / (2 - sin^2 (1 + cos dphi))^2"""
    s2, c2 = np.sin(theta) ** 2, np.cos(theta) ** 2
    k = 1.0 + np.cos(dphi)
    denom = (2.0 - s2 * k) ** 2
    if denom == 0.0:
        return np.inf
    return float(s2 * c2 * 2.0 * k / denom)


def worst_case_rmse(theta: float, dphi: float, dz_max: float) -> WorstCase:
    """
    e_max = dz_max sqrt(tan^2(theta) + 1); the maximum of ||C^+ b||^2 over
    dphi is reached at dphi = 0.
    """
    _check_elevation(theta)
    if dz_max < 0:
        raise ArgumentError(f"dz_max must be >= 0, got {dz_max}")
    if np.isclose(theta, np.pi / 2):
        return WorstCase(np.inf, np.inf, np.inf if dz_max > 0 else 0.0, unbounded=True)
    peak = float(np.tan(theta) ** 2)
    return WorstCase(norm2_cb_closed_form(theta, dphi), peak, dz_max * float(np.sqrt(peak + 1.0)))


def map_relief(city: CityMap) -> float:
    return city.relief


def bound_table(thetas, dphis, dz_max: float) -> list[dict[str, float]]:
    rows = []
    for theta in np.atleast_1d(thetas):
        for dphi in np.atleast_1d(dphis):
            wc = worst_case_rmse(float(theta), float(dphi), dz_max)
            rows.append({
                "theta_deg": float(np.degrees(theta)),
                "dphi_deg": float(np.degrees(dphi)),
                "norm2_cb": wc.norm2_cb,
                "e_max": wc.e_max,
            })
    return rows
