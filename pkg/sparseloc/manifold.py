"""
Initial array manifold: directions toward known sources fused with gated
new directions from the rough AOA stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NothingToRefineError
from .scene import ArrayGeometry
from .schema import ColumnTag
from .synthesis import steering_matrix

logger = logging.getLogger("sparseloc.manifold")


@dataclass(frozen=True, eq=False)
class DirectionBank:
    """Unit directions U_D (3 x K) with one provenance tag per column."""

    directions: np.ndarray = field(default_factory=lambda: np.zeros((3, 0)))
    tags: tuple[ColumnTag, ...] = ()

    def __post_init__(self):
        dirs = np.asarray(self.directions, dtype=float).reshape(3, -1)
        if dirs.shape[1] != len(self.tags):
            raise ArgumentError(f"{dirs.shape[1]} directions but {len(self.tags)} tags")
        if dirs.size and not np.allclose(np.linalg.norm(dirs, axis=0), 1.0, atol=1e-10):
            raise ArgumentError("bank directions must be unit vectors")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def size(self) -> int:
        return self.directions.shape[1]


@dataclass(frozen=True, eq=False)
class ManifoldEstimate:
    """Steering-vector columns (M x N) with per-column provenance."""

    columns: np.ndarray
    tags: tuple[ColumnTag, ...]
    iterations: int = 0
    converged: bool = False
    fit_residual: float = float("nan")  # ||Y - A S~||_F after the last K-SVD pass

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=complex)
        if cols.ndim != 2 or cols.shape[1] != len(self.tags):
            raise ArgumentError(f"{cols.shape} columns but {len(self.tags)} tags")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def size(self) -> int:
        return self.columns.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.size == 0


def directions_to_estimates(positions, r_i) -> tuple[np.ndarray, np.ndarray]:
    """
    Unit directions from ``r_i`` to each estimated position.

    Returns the 3 x K matrix and the indices of the positions used;
    positions coinciding with ``r_i`` are skipped.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    offsets = positions - np.asarray(r_i, dtype=float)
    norms = np.linalg.norm(offsets, axis=1)
    usable = np.flatnonzero(norms > 0)
    if usable.size < positions.shape[0]:
        logger.warning("Skipping %d position(s) coincident with the array", positions.shape[0] - usable.size)
    return (offsets[usable] / norms[usable, None]).T, usable


def gate_new_directions(new_dirs, bank: DirectionBank, xi: float) -> np.ndarray:
    """
    Indices of the new directions with max |u . U_D| < xi.

    An empty bank gives m_p = 0, so everything passes.
    """
    if not 0.0 < xi < 1.0:
        raise ArgumentError(f"xi must lie in (0, 1), got {xi}")
    new_dirs = np.asarray(new_dirs, dtype=float).reshape(3, -1)
    if new_dirs.shape[1] == 0:
        return np.empty(0, dtype=np.int64)
    if bank.size == 0:
        return np.arange(new_dirs.shape[1])
    m_p = np.max(np.abs(new_dirs.T @ bank.directions), axis=1)
    return np.flatnonzero(m_p < xi)


def initial_manifold(bank: DirectionBank, new_dirs, geom: ArrayGeometry) -> ManifoldEstimate:
    """A0 = exp(jK D^T [U_D, U_3]); new columns get provisional tags 0..k-1."""
    new_dirs = np.asarray(new_dirs, dtype=float).reshape(3, -1)
    directions = np.hstack([bank.directions, new_dirs])
    if directions.shape[1] == 0:
        raise NothingToRefineError("nothing to refine")
    tags = bank.tags + tuple(ColumnTag.new(k) for k in range(new_dirs.shape[1]))
    return ManifoldEstimate(steering_matrix(geom, directions), tags)
