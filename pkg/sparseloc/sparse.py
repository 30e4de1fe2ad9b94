"""
Sparse coding engines of the AOA refiner.

- exhaustive-combination L0 recovery under a residual budget
- the epsilon_opt residual-budget model
- phase smoothing of recovered source rows
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ArgumentError, ConfigurationError
from .utils import select_runs

logger = logging.getLogger("sparseloc.sparse")

PINV_RCOND = 1e-12


# ============================================================
# Epsilon model
# ============================================================

@dataclass(frozen=True, eq=False)
class EpsilonModel:
    """
    log10 f(N, gamma) = sum_j P_{j,N} gamma_dB^j, one degree-4 fit per N.

    N outside the fitted set is extrapolated linearly in N from the two
    nearest fitted values; gamma_dB is clamped to the calibration grid.
    Files read back from disk must carry calibration metadata.
    """

    coefficients: dict[int, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.coefficients:
            raise ConfigurationError("EpsilonModel needs at least one N")
        coeffs = {int(n): np.asarray(c, dtype=float) for n, c in self.coefficients.items()}
        for n, c in coeffs.items():
            if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
                raise ConfigurationError(f"invalid coefficients for N={n}")
        object.__setattr__(self, "coefficients", dict(sorted(coeffs.items())))

    @property
    def is_calibrated(self) -> bool:
        return self.metadata.get("kind") == "calibrated" and int(self.metadata.get("trials", 0)) > 0

    @property
    def n_values(self) -> list[int]:
        return list(self.coefficients)

    def _gamma_db(self, gamma: float) -> float:
        gamma_db = 10.0 * np.log10(gamma)
        lo = self.metadata.get("gamma_db_min")
        hi = self.metadata.get("gamma_db_max")
        if lo is not None and hi is not None:
            gamma_db = float(np.clip(gamma_db, lo, hi))
        return gamma_db

    def log10_f(self, n: int, gamma: float) -> float:
        return float(P.polyval(self._gamma_db(gamma), self.coefficients[n]))

    def f(self, n: int, gamma: float) -> float:
        if n < 1:
            raise ArgumentError(f"N must be >= 1, got {n}")
        if n in self.coefficients:
            return 10.0 ** self.log10_f(n, gamma)
        ns = self.n_values
        if len(ns) == 1:
            return 10.0 ** self.log10_f(ns[0], gamma)
        if n < ns[0]:
            n_a, n_b = ns[0], ns[1]
        elif n > ns[-1]:
            n_a, n_b = ns[-2], ns[-1]
        else:
            k = int(np.searchsorted(ns, n))
            n_a, n_b = ns[k - 1], ns[k]
        f_a, f_b = 10.0 ** self.log10_f(n_a, gamma), 10.0 ** self.log10_f(n_b, gamma)
        return f_a + (n - n_a) * (f_b - f_a) / (n_b - n_a)

    # --------------------------
    # Persistence
    # --------------------------

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        degree = max(c.size for c in self.coefficients.values())
        lines = ["# " + json.dumps(self.metadata, sort_keys=True)]
        lines.append(",".join(["N"] + [f"P{j}" for j in range(degree)]))
        for n, c in self.coefficients.items():
            padded = np.zeros(degree)
            padded[: c.size] = c
            lines.append(",".join([str(n)] + [repr(float(v)) for v in padded]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "EpsilonModel":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Epsilon model not found: {path}")
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        metadata: dict[str, Any] = {}
        if lines and lines[0].startswith("#"):
            metadata = json.loads(lines.pop(0)[1:].strip() or "{}")
        if not lines or not lines[0].startswith("N"):
            raise ConfigurationError(f"{path}: missing 'N,P0,...' header")
        coefficients = {}
        for row in lines[1:]:
            parts = row.split(",")
            coefficients[int(parts[0])] = np.array([float(v) for v in parts[1:]])
        model = cls(coefficients, metadata)
        if not model.is_calibrated:
            raise ConfigurationError(
                f"{path}: not a calibrated epsilon model "
                f"(kind={metadata.get('kind')!r}, trials={metadata.get('trials')!r}); run calibrate-f"
            )
        return model


def epsilon_opt(
    model: EpsilonModel,
    n: int,
    gamma: float,
    m: int,
    e_avg: float,
    noise_var: float,
) -> float:
    """sqrt(f(N, gamma) M E_avg + M sigma^2) with f floored at 0."""
    f = max(model.f(n, gamma), 0.0) if gamma > 0 and np.isfinite(e_avg) else 0.0
    return float(np.sqrt(f * m * max(e_avg, 0.0) + m * noise_var))


# ============================================================
# L0 recovery
# ============================================================

@dataclass(frozen=True, eq=False)
class LevelSolution:
    """
    Best j-column fit of every column for j = 1..L.

    ``residuals[j-1, g]`` is the projection residual of the best
    j-combination ``combos[j-1][best[j-1, g]]`` whose LS coefficients are
    ``coefficients[j-1][:, g]``.
    """

    norms: np.ndarray
    residuals: np.ndarray
    best: np.ndarray
    combos: list[np.ndarray]
    coefficients: list[np.ndarray]
    n_atoms: int

    @property
    def levels(self) -> int:
        return len(self.combos)


@dataclass(frozen=True, eq=False)
class SparseEstimate:
    matrix: np.ndarray
    supports: tuple[tuple[int, ...], ...]
    residuals: np.ndarray
    eps: float

    @property
    def support_sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.supports], dtype=np.int64)


@dataclass(frozen=True)
class SparseSolution:
    support: tuple[int, ...]
    coefficients: np.ndarray
    residual: float


def solve_levels(block: np.ndarray, atoms: np.ndarray, l_max: int, chunk: int = 512) -> LevelSolution:
    """Exhaustive best-combination search per sparsity level, column by column."""
    Y = np.asarray(block, dtype=complex).reshape(np.shape(block)[0], -1)
    A = np.asarray(atoms, dtype=complex)
    M, G = Y.shape
    N = A.shape[1]
    if N < 1 or l_max < 1:
        raise ArgumentError("need at least one atom and l_max >= 1")
    if A.shape[0] != M:
        raise ArgumentError(f"atoms have {A.shape[0]} rows, block has {M}")

    identity = np.eye(M)
    levels = min(l_max, N)
    residuals = np.empty((levels, G))
    best = np.empty((levels, G), dtype=np.int64)
    combos_by_level, coefs_by_level = [], []

    for level in range(1, levels + 1):
        combos = np.array(list(combinations(range(N), level)), dtype=np.int64)
        sub = np.transpose(A[:, combos], (1, 0, 2))  # (K, M, j)
        pinvs = np.linalg.pinv(sub, rcond=PINV_RCOND)  # (K, j, M)
        annihilators = identity - sub @ pinvs  # (K, M, M)
        coefs = np.empty((level, G), dtype=complex)

        for start in range(0, G, chunk):
            Yc = Y[:, start:start + chunk]
            res = np.linalg.norm(np.einsum("kmn,ng->kmg", annihilators, Yc), axis=1)
            k_best = np.argmin(res, axis=0)
            cols = np.arange(Yc.shape[1])
            residuals[level - 1, start:start + chunk] = res[k_best, cols]
            best[level - 1, start:start + chunk] = k_best
            coefs[:, start:start + chunk] = np.einsum("gjm,mg->jg", pinvs[k_best], Yc)

        combos_by_level.append(combos)
        coefs_by_level.append(coefs)

    return LevelSolution(
        norms=np.linalg.norm(Y, axis=0),
        residuals=residuals,
        best=best,
        combos=combos_by_level,
        coefficients=coefs_by_level,
        n_atoms=N,
    )


def select_level(solution: LevelSolution, eps: float) -> SparseEstimate:
    """
    Apply the residual budget: empty support if ||y|| <= eps, else the
    smallest level meeting it, else the deepest level.
    """
    L, G = solution.residuals.shape
    satisfied = solution.residuals <= eps
    chosen = np.where(satisfied.any(axis=0), np.argmax(satisfied, axis=0), L - 1)
    silent = solution.norms <= eps

    S = np.zeros((solution.n_atoms, G), dtype=complex)
    residual = solution.norms.copy()
    supports: list[tuple[int, ...]] = [()] * G
    for level in range(L):
        cols = np.flatnonzero((chosen == level) & ~silent)
        if cols.size == 0:
            continue
        rows = solution.combos[level][solution.best[level, cols]]  # (c, j)
        S[rows, cols[:, None]] = solution.coefficients[level][:, cols].T
        residual[cols] = solution.residuals[level, cols]
        for c, r in zip(cols, rows):
            supports[c] = tuple(int(v) for v in r)
    return SparseEstimate(S, tuple(supports), residual, float(eps))


def sparse_recover(y, atoms, eps: float, l_max: int) -> SparseSolution:
    """Smallest-support LS fit of one column within residual ``eps``."""
    y = np.asarray(y, dtype=complex).reshape(-1, 1)
    estimate = select_level(solve_levels(y, atoms, l_max), eps)
    support = estimate.supports[0]
    return SparseSolution(
        support=support,
        coefficients=estimate.matrix[list(support), 0],
        residual=float(estimate.residuals[0]),
    )


def recover_matrix(block, atoms, eps: float, l_max: int, chunk: int = 512) -> SparseEstimate:
    """Column-wise sparse_recover with one shared budget."""
    return select_level(solve_levels(block, atoms, l_max, chunk), eps)


# ============================================================
# Phase smoothing
# ============================================================

@dataclass(frozen=True, eq=False)
class SmoothedSignal:
    """Refined source rows; ``row_map[r]`` is the input row of output row r."""

    matrix: np.ndarray
    row_map: np.ndarray

    @property
    def is_empty(self) -> bool:
        return self.row_map.size == 0


def smooth_row(row: np.ndarray, q_mrs: np.ndarray, diff_max: int, l_adj: int, eps_phi: float) -> np.ndarray:
    """Keep entries lying on runs of adjacent samples with continuous folded phase."""
    out = np.zeros_like(row)
    nz = np.flatnonzero(row)
    if nz.size < 2:
        return out
    values = row[nz]
    folded = np.where(values.imag < 0, -values, values)
    dphi = np.abs(np.diff(np.angle(folded)))
    smooth = (dphi < eps_phi) | (dphi > np.pi - eps_phi)
    adjacent = np.diff(q_mrs[nz]) <= diff_max
    keep = nz[select_runs(smooth & adjacent, l_adj - 1)]
    out[keep] = row[keep]
    return out


def phase_smooth(
    s_hat,
    q_mrs,
    diff_max: int = 20,
    l_adj: int = 5,
    eps_phi: float = np.pi / 10,
) -> SmoothedSignal:
    S = np.asarray(s_hat.matrix if isinstance(s_hat, SparseEstimate) else s_hat, dtype=complex)
    q = np.asarray(q_mrs, dtype=np.int64)
    if S.ndim != 2 or S.shape[0] < 1:
        raise ArgumentError("phase_smooth needs at least one row")
    if q.size != S.shape[1]:
        raise ArgumentError(f"{q.size} column indices for {S.shape[1]} columns")

    out = np.vstack([smooth_row(S[n], q, diff_max, l_adj, eps_phi) for n in range(S.shape[0])])
    row_map = np.flatnonzero(np.any(out != 0, axis=1))
    return SmoothedSignal(out[row_map], row_map)
