"""
Energy detector: iterative thresholding with a run-length continuity filter.

Discards noise-only columns of a window and estimates the noise variance and
the instantaneous SNR of what it keeps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import DetectorConfig
from .errors import ArgumentError
from .scene import SourceSet
from .utils import select_runs

logger = logging.getLogger("sparseloc.detector")


@dataclass(frozen=True, eq=False)
class DetectionResult:
    """
    Output of the energy detector.

    ``kept_indices`` are 0-based column indices into the window block.
    ``inst_snr`` is clamped at 0; ``inst_snr_raw`` keeps the estimator value.
    """

    kept_indices: np.ndarray
    filtered: np.ndarray
    noise_var: float
    inst_snr: float
    inst_snr_raw: float
    iterations: int
    converged: bool
    noise_carried_forward: bool
    total_columns: int

    @property
    def kept_count(self) -> int:
        return int(self.kept_indices.size)

    @property
    def is_empty(self) -> bool:
        return self.kept_indices.size == 0

    @property
    def signal_power(self) -> float:
        """Per-element signal power of the kept columns, gamma_hat * sigma_hat^2."""
        if self.is_empty:
            return 0.0
        M = self.filtered.shape[0]
        mean_power = float(np.sum(np.abs(self.filtered) ** 2)) / (M * self.kept_count)
        return max(mean_power - self.noise_var, 0.0)


# ============================================================
# Building blocks
# ============================================================

def threshold_from_p0(p0: float, noise_var: float) -> float:
    """V_th = sqrt(-ln(p0) * sigma^2): P(|CN(0, sigma^2)| > V_th) = p0."""
    if not 0.0 < p0 < 1.0:
        raise ArgumentError(f"p0 must lie in (0, 1), got {p0}")
    if noise_var < 0:
        raise ArgumentError(f"noise variance must be >= 0, got {noise_var}")
    return float(np.sqrt(-np.log(p0) * noise_var))


def run_length_filter(indices, diff_max: int, l_adj: int) -> np.ndarray:
    """Keep indices belonging to adjacency runs of at least l_adj - 1 links."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size < 2:
        return np.empty(0, dtype=np.int64)
    adjacent = np.diff(indices) <= diff_max
    return indices[select_runs(adjacent, l_adj - 1)]


# ============================================================
# Detector
# ============================================================

def detect(
    block: np.ndarray,
    cfg: DetectorConfig | None = None,
    noise_var: Optional[float] = None,
) -> DetectionResult:
    """
    Run the detector on an M x G block.

    ``noise_var`` overrides the initial estimate ||Y||_F^2 / (M G).
    """
    cfg = cfg or DetectorConfig()
    Y = np.asarray(block, dtype=complex)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ArgumentError(f"detect needs an M x G block with G >= 1, got {Y.shape}")
    M, G = Y.shape

    power = np.abs(Y) ** 2
    col_energy = power.sum(axis=0)
    col_peak = np.sqrt(power.max(axis=0))
    total = float(col_energy.sum())

    sigma2 = total / (M * G) if noise_var is None else float(noise_var)
    kept: Optional[np.ndarray] = None
    carried = False
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iters + 1):
        v_th = threshold_from_p0(cfg.p0, sigma2)
        candidates = np.flatnonzero(col_peak > v_th)
        q = run_length_filter(candidates, cfg.diff_max, cfg.l_adj)

        rest = G - q.size
        if rest == 0:
            carried = True
            logger.warning("Every column retained; keeping previous noise estimate %.3e", sigma2)
        else:
            sigma2 = max(total - float(col_energy[q].sum()), 0.0) / (M * rest)

        if kept is not None and np.array_equal(q, kept):
            converged = True
            break
        kept = q

    kept = q
    if kept.size:
        mean_power = float(col_energy[kept].sum()) / (M * kept.size)
        if sigma2 > 0:
            raw = (mean_power - sigma2) / sigma2
        else:
            raw = np.inf if mean_power > 0 else -1.0
    else:
        raw = -1.0

    logger.debug(
        "Detector kept %d/%d columns after %d iterations (sigma2=%.3e, gamma=%.3g)",
        kept.size, G, iterations, sigma2, raw,
    )
    return DetectionResult(
        kept_indices=kept,
        filtered=Y[:, kept],
        noise_var=sigma2,
        inst_snr=max(raw, 0.0),
        inst_snr_raw=raw,
        iterations=iterations,
        converged=converged,
        noise_carried_forward=carried,
        total_columns=G,
    )


# ============================================================
# SNR bookkeeping
# ============================================================

def snr_star(sources: SourceSet, r0, noise_var: float) -> float:
    """sum_n P_n / (4 pi R_n^2 sigma^2)"""
    ranges = np.linalg.norm(sources.positions - np.asarray(r0, dtype=float), axis=1)
    received = float(np.sum(sources.pulse_power / (4.0 * np.pi * ranges**2)))
    if noise_var == 0:
        return np.inf
    return received / noise_var


def true_inst_snr(clean: np.ndarray, noise: np.ndarray, kept_indices) -> float:
    """||X_MRS||^2 / ||V_MRS||^2 over the detector's kept columns."""
    kept = np.asarray(kept_indices, dtype=np.int64)
    if kept.size == 0:
        return float("nan")
    signal = float(np.sum(np.abs(clean[:, kept]) ** 2))
    noise_energy = float(np.sum(np.abs(noise[:, kept]) ** 2))
    if noise_energy == 0:
        return np.inf
    return signal / noise_energy
