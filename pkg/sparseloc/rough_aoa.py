"""
Second-order front end: sample covariance, MDL model order, 2D-MUSIC
spectrum and peak picking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ArgumentError, NoDetectionsError
from .scene import ArrayGeometry
from .synthesis import steering_matrix, unit_directions

logger = logging.getLogger("sparseloc.rough_aoa")


# ============================================================
# Angle grid
# ============================================================

@dataclass(frozen=True, eq=False)
class AngleGrid:
    elevations: np.ndarray
    azimuths: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.elevations, dtype=float)
        phi = np.asarray(self.azimuths, dtype=float)
        if theta.ndim != 1 or phi.ndim != 1 or theta.size == 0 or phi.size == 0:
            raise ArgumentError("grid axes must be non-empty 1D arrays")
        if np.any(np.diff(theta) <= 0) or np.any(np.diff(phi) <= 0):
            raise ArgumentError("grid axes must be strictly increasing")
        if theta[0] < 0 or theta[-1] > np.pi + 1e-12 or phi[0] < 0 or phi[-1] >= 2 * np.pi:
            raise ArgumentError("grid must lie within [0, pi] x [0, 2pi)")
        object.__setattr__(self, "elevations", theta)
        object.__setattr__(self, "azimuths", phi)

    @classmethod
    def uniform(cls, step_deg: float = 1.0, theta_range_deg: tuple[float, float] = (0.0, 180.0)) -> "AngleGrid":
        lo, hi = theta_range_deg
        count = int(np.floor((hi - lo) / step_deg + 1e-9)) + 1
        theta = np.radians(lo + step_deg * np.arange(count))
        n_phi = int(np.floor(360.0 / step_deg - 1e-9)) + 1
        phi = np.radians(step_deg * np.arange(n_phi))
        return cls(theta, phi[phi < 2 * np.pi])

    @property
    def shape(self) -> tuple[int, int]:
        return self.elevations.size, self.azimuths.size

    def directions(self) -> np.ndarray:
        """Unit vectors of every grid point as a 3 x (K_theta K_phi) matrix, theta-major."""
        theta, phi = np.meshgrid(self.elevations, self.azimuths, indexing="ij")
        return unit_directions(theta.ravel(), phi.ravel()).T

    def angles(self, flat_index) -> tuple[float, float]:
        it, ip = np.unravel_index(flat_index, self.shape)
        return float(self.elevations[it]), float(self.azimuths[ip])


def grid_steering(geom: ArrayGeometry, grid: AngleGrid) -> np.ndarray:
    """Steering vectors of every grid point, M x (K_theta K_phi)."""
    return steering_matrix(geom, grid.directions())


@dataclass(frozen=True, eq=False)
class MusicSpectrum:
    values: np.ndarray
    grid: AngleGrid


@dataclass(frozen=True)
class PeakPick:
    angles: list[tuple[float, float]]
    requested: int

    @property
    def shortfall(self) -> bool:
        return len(self.angles) < self.requested


# ============================================================
# Covariance and model order
# ============================================================

def sample_covariance(filtered: np.ndarray) -> np.ndarray:
    """R = Y Y^H / G_MRS"""
    Y = np.asarray(filtered, dtype=complex)
    if Y.ndim != 2 or Y.shape[1] == 0:
        raise NoDetectionsError("no detections this window")
    R = (Y @ Y.conj().T) / Y.shape[1]
    return 0.5 * (R + R.conj().T)


def mdl_order(
    eigenvalues,
    snapshots: int,
    floor: float = 1e-30,
    rel_floor: float = 0.0,
) -> int:
    """
    Number of sources minimizing
    -2 G (M - m) ln rho(m) + m (2M - m) ln G,
    rho(m) = geometric / arithmetic mean of the M - m smallest eigenvalues.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    M = lam.size
    if M == 0:
        raise ArgumentError("mdl_order needs at least one eigenvalue")
    lam = np.maximum(lam, max(floor, rel_floor * lam[0]))
    G = max(int(snapshots), 1)

    scores = np.empty(M)
    for m in range(M):
        tail = lam[m:]
        log_rho = np.mean(np.log(tail)) - np.log(np.mean(tail))
        scores[m] = -2.0 * G * (M - m) * log_rho + m * (2 * M - m) * np.log(G)
    return int(np.argmin(scores))


# ============================================================
# MUSIC
# ============================================================

def music_spectrum(
    R: np.ndarray,
    order: int,
    geom: ArrayGeometry,
    grid: AngleGrid,
    steering: np.ndarray | None = None,
) -> MusicSpectrum:
    """1 / ||U_n^H a||^2 with U_n the M - P smallest-eigenvalue eigenvectors."""
    M = R.shape[0]
    if not 0 <= order < M:
        raise ArgumentError(f"model order must satisfy 0 <= P < M={M}, got {order}")
    _, vectors = linalg.eigh(R)
    noise_subspace = vectors[:, : M - order]

    A = grid_steering(geom, grid) if steering is None else steering
    projection = np.sum(np.abs(noise_subspace.conj().T @ A) ** 2, axis=0)
    values = 1.0 / np.maximum(projection, np.finfo(float).tiny)
    return MusicSpectrum(values.reshape(grid.shape), grid)


def pick_peaks(spectrum: MusicSpectrum, count: int) -> PeakPick:
    """
    The ``count`` largest strict local maxima over the 8-neighborhood.

    Azimuth wraps around; elevation edges have no neighbors beyond them.
    """
    if count < 0:
        raise ArgumentError("peak count must be >= 0")
    values = spectrum.values
    padded = np.pad(values, ((1, 1), (0, 0)), constant_values=-np.inf)
    is_peak = np.ones(values.shape, dtype=bool)
    for d_theta in (-1, 0, 1):
        rows = padded[1 + d_theta: 1 + d_theta + values.shape[0]]
        for d_phi in (-1, 0, 1):
            if d_theta == 0 and d_phi == 0:
                continue
            is_peak &= values > np.roll(rows, -d_phi, axis=1)

    # a pole row is one physical direction; its neighbors are the whole next row
    theta = spectrum.grid.elevations
    for row in np.flatnonzero((theta < 1e-12) | (theta > np.pi - 1e-12)):
        is_peak[row, :] = False
        neighbors = [values[r] for r in (row - 1, row + 1) if 0 <= r < values.shape[0]]
        if not neighbors or values[row, 0] > np.max(neighbors):
            is_peak[row, 0] = True

    it, ip = np.nonzero(is_peak)
    order = np.lexsort((ip, it, -values[it, ip]))[:count]
    angles = [
        (float(spectrum.grid.elevations[it[k]]), float(spectrum.grid.azimuths[ip[k]]))
        for k in order
    ]
    pick = PeakPick(angles, count)
    if pick.shortfall:
        logger.warning("Found %d local maxima, %d requested", len(angles), count)
    return pick


def rough_directions(pick: PeakPick) -> np.ndarray:
    """Peak angles as a 3 x P matrix of unit directions."""
    if not pick.angles:
        return np.zeros((3, 0))
    theta, phi = np.array(pick.angles).T
    return unit_directions(theta, phi).T
