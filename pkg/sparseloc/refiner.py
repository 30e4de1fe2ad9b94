"""
Closed-loop array manifold refinement.

Each iteration: sparse coding -> phase smoothing -> LS manifold update ->
K-SVD rank-1 column refinement. AOAs are read out by beamforming against
the refined columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .config import RefinerConfig
from .detector import DetectionResult
from .errors import ArgumentError
from .manifold import ManifoldEstimate
from .rough_aoa import AngleGrid, grid_steering
from .scene import ArrayGeometry
from .schema import ColumnTag
from .sparse import PINV_RCOND, EpsilonModel, SmoothedSignal, epsilon_opt, phase_smooth, recover_matrix
from .synthesis import angles_of, steering_matrix, unit_directions

logger = logging.getLogger("sparseloc.refiner")


@dataclass(frozen=True)
class KsvdStep:
    column: int
    before: float
    after: float


@dataclass(frozen=True)
class RefinedAoa:
    tag: ColumnTag
    theta: float
    phi: float

    @property
    def direction(self) -> np.ndarray:
        return unit_directions(self.theta, self.phi)


def canonical_columns(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Unit-norm columns with a real non-negative first entry.

    Returns the canonical matrix and the per-column factor k with
    A_canon = A * k, so matching rows of S must be divided by k.
    """
    A = np.asarray(A, dtype=complex)
    norms = np.linalg.norm(A, axis=0)
    lead = A[0]
    phase = np.where(np.abs(lead) > 0, np.conj(lead) / np.where(np.abs(lead) > 0, np.abs(lead), 1.0), 1.0)
    factor = np.where(norms > 0, phase / np.where(norms > 0, norms, 1.0), 1.0)
    return A * factor, factor


# ============================================================
# Manifold updates
# ============================================================

def ls_manifold_update(block: np.ndarray, smoothed: SmoothedSignal, tags: Sequence[ColumnTag]) -> ManifoldEstimate:
    """A = Y S~^+, tags follow the smoother's row map."""
    if smoothed.is_empty:
        raise ArgumentError("LS update needs at least one refined row")
    A = np.asarray(block, dtype=complex) @ np.linalg.pinv(smoothed.matrix, rcond=PINV_RCOND)
    return ManifoldEstimate(A, tuple(tags[r] for r in smoothed.row_map))


def ksvd_pass(block: np.ndarray, A_hat: np.ndarray, S: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[KsvdStep]]:
    """
    One sweep of rank-1 column updates restricted to each row's support.

    Returns updated copies of (A, S) and the restricted residual before and
    after each column update.
    """
    Y = np.asarray(block, dtype=complex)
    A = np.array(A_hat, dtype=complex, copy=True)
    S = np.array(S, dtype=complex, copy=True)
    if A.shape[1] != S.shape[0]:
        raise ArgumentError(f"{A.shape[1]} columns but {S.shape[0]} rows")

    steps: list[KsvdStep] = []
    for j in range(A.shape[1]):
        support = np.flatnonzero(S[j])
        if support.size == 0:
            continue
        own = np.outer(A[:, j], S[j, support])
        E = Y[:, support] - A @ S[:, support] + own
        before = float(np.linalg.norm(E - own))

        U, s, Vh = np.linalg.svd(E, full_matrices=False)
        u, row = U[:, 0], s[0] * Vh[0]
        if abs(u[0]) > 0:
            c = np.conj(u[0]) / abs(u[0])
            u, row = u * c, row * np.conj(c)
        A[:, j] = u
        S[j, support] = row
        steps.append(KsvdStep(j, before, float(np.linalg.norm(E - np.outer(u, row)))))
    return A, S, steps


def _manifold_change(A_old, tags_old, A_new, tags_new) -> float:
    if tuple(tags_old) == tuple(tags_new):
        return float(np.linalg.norm(A_new - A_old)) / max(A_new.shape[1], 1)
    old_index = {t: k for k, t in enumerate(tags_old)}
    pairs = [(old_index[t], k) for k, t in enumerate(tags_new) if t in old_index]
    if not pairs:
        return np.inf
    old_cols, new_cols = map(list, zip(*pairs))
    return float(np.linalg.norm(A_new[:, new_cols] - A_old[:, old_cols])) / len(pairs)


def refine_manifold(
    block: np.ndarray,
    a0: ManifoldEstimate,
    detection: DetectionResult,
    model: EpsilonModel,
    cfg: RefinerConfig | None = None,
) -> ManifoldEstimate:
    """
    Iterate until ||A - A_old||_F / N <= eps_aoa or max_iters.

    Columns only disappear (when the smoother empties their row); an empty
    estimate means no refinable source this window.
    """
    cfg = cfg or RefinerConfig()
    if a0.is_empty:
        raise ArgumentError("refine_manifold needs a non-empty initial manifold")
    Y = np.asarray(block, dtype=complex)
    M = Y.shape[0]
    q = detection.kept_indices

    A, _ = canonical_columns(a0.columns)
    tags = a0.tags
    converged = False
    iteration = 0
    fit = float("nan")
    for iteration in range(1, cfg.max_iters + 1):
        eps = epsilon_opt(model, A.shape[1], detection.inst_snr, M, detection.signal_power, detection.noise_var)
        estimate = recover_matrix(Y, A, eps, cfg.l_max, cfg.column_chunk)
        smoothed = phase_smooth(estimate, q, cfg.diff_max, cfg.l_adj, cfg.eps_phi)
        if smoothed.is_empty:
            logger.info("No refinable sources (iteration %d)", iteration)
            return ManifoldEstimate(np.zeros((M, 0), dtype=complex), (), iteration, False)

        updated = ls_manifold_update(Y, smoothed, tags)
        A_new, S_new, _ = ksvd_pass(Y, updated.columns, smoothed.matrix)
        A_new, factor = canonical_columns(A_new)
        fit = float(np.linalg.norm(Y - A_new @ (S_new / factor[:, None])))

        change = _manifold_change(A, tags, A_new, updated.tags)
        logger.debug(
            "Refiner iteration %d: %d columns, change %.3e, fit residual %.3e",
            iteration, A_new.shape[1], change, fit,
        )
        A, tags = A_new, updated.tags
        if change <= cfg.eps_aoa:
            converged = True
            break

    return ManifoldEstimate(A, tags, iteration, converged, fit)


# ============================================================
# Readout
# ============================================================

def _polish(column: np.ndarray, geom: ArrayGeometry, theta0: float, phi0: float, step: float) -> tuple[float, float]:
    scale = np.sqrt(geom.elements) * np.linalg.norm(column)

    def loss(x: np.ndarray) -> float:
        a = steering_matrix(geom, unit_directions(x[0], x[1])[:, None])[:, 0]
        return -abs(np.vdot(a, column)) / scale

    x0 = np.array([theta0, phi0])
    simplex = np.array([x0, x0 + [step, 0.0], x0 + [0.0, step]])
    result = optimize.minimize(
        loss,
        x0,
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": 1e-10, "fatol": 1e-15, "maxiter": 600},
    )
    best = result.x if result.fun <= loss(x0) else x0
    return angles_of(unit_directions(best[0], best[1]))


def read_aoas(
    manifold: ManifoldEstimate,
    grid: AngleGrid,
    geom: ArrayGeometry,
    steering: np.ndarray | None = None,
    polish: bool = False,
) -> list[RefinedAoa]:
    """Grid argmax of |a(theta, phi)^H c| per column, optionally polished off-grid."""
    if manifold.is_empty:
        raise ArgumentError("read_aoas needs a non-empty manifold")
    A_grid = grid_steering(geom, grid) if steering is None else steering
    scores = np.abs(A_grid.conj().T @ manifold.columns)
    best = np.argmax(scores, axis=0)
    step = float(np.min(np.diff(grid.elevations))) if grid.elevations.size > 1 else np.radians(1.0)

    aoas = []
    for k, tag in enumerate(manifold.tags):
        theta, phi = grid.angles(best[k])
        if polish:
            theta, phi = _polish(manifold.columns[:, k], geom, theta, phi, step)
        aoas.append(RefinedAoa(tag, theta, phi))
    return aoas
