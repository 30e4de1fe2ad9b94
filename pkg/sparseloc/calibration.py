"""
Calibration of the residual-budget model f(N, gamma).

For every (N, gamma) cell, random sparse source matrices are pushed through
a random array manifold with random attenuation, noise is added at the
target SNR, and the budget that minimizes the recovery error is located on a
log-spaced sweep. Cell means of log10 f are fitted per N with a degree-4
polynomial in gamma_dB.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from numpy.polynomial import polynomial as P

from .config import CalibrationConfig, RefinerConfig
from .errors import CalibrationError, ConfigurationError
from .scene import ArrayGeometry
from .sparse import EpsilonModel, select_level, solve_levels
from .synthesis import Stream, rng_stream, steering_matrix

logger = logging.getLogger("sparseloc.calibration")

SPARSITY_LEVELS = (0, 1, 2, 3)
SPARSITY_PROBS = (0.1, 0.65, 0.2, 0.05)
POLY_DEGREE = 4
MODEL_VERSION = 1
DEFAULT_CACHE_DIR = Path.home() / ".sparseloc" / "cache"


@dataclass(frozen=True)
class CalibrationCell:
    n: int
    gamma_db: float
    log10_f: float
    survivors: int
    fitted: float = float("nan")

    @property
    def residual(self) -> float:
        return self.fitted - self.log10_f


@dataclass(frozen=True)
class MonotonicityReport:
    non_increasing_in_gamma: bool
    non_decreasing_in_n: bool
    gamma_violations: list[tuple[int, float]] = field(default_factory=list)
    n_violations: list[tuple[int, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.non_increasing_in_gamma and self.non_decreasing_in_n


@dataclass(frozen=True)
class CalibrationReport:
    cells: list[CalibrationCell]
    monotonicity: MonotonicityReport

    @property
    def max_abs_residual(self) -> float:
        return max((abs(c.residual) for c in self.cells), default=0.0)


# ============================================================
# Sample generation
# ============================================================

def sparse_source_matrix(n: int, columns: int, rng: np.random.Generator) -> np.ndarray:
    """Columns with 0..3 active CN(0, 1) entries at the configured occurrence rates."""
    S = np.zeros((n, columns), dtype=complex)
    sizes = np.minimum(rng.choice(SPARSITY_LEVELS, size=columns, p=SPARSITY_PROBS), n)
    for g in np.flatnonzero(sizes):
        rows = rng.choice(n, size=sizes[g], replace=False)
        S[rows, g] = (rng.standard_normal(sizes[g]) + 1j * rng.standard_normal(sizes[g])) / np.sqrt(2.0)
    return S


def random_manifold(geom: ArrayGeometry, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.standard_normal((3, n))
    return steering_matrix(geom, u / np.linalg.norm(u, axis=0))


def random_attenuation(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.5, 1.0, n) * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, n))


def _iqr_keep(values: np.ndarray) -> np.ndarray:
    q1, q3 = np.percentile(values, [25, 75])
    spread = 1.5 * (q3 - q1)
    return values[(values >= q1 - spread) & (values <= q3 + spread)]


# ============================================================
# Per-N sweep
# ============================================================

def _calibrate_n(geom: ArrayGeometry, n: int, cfg: CalibrationConfig) -> list[CalibrationCell]:
    gammas_db = np.asarray(cfg.gamma_grid_db())
    f_grid = np.logspace(*cfg.f_grid_log10[:2], int(cfg.f_grid_log10[2]))
    M = geom.elements
    best_log10 = np.empty((cfg.trials, gammas_db.size))

    for trial in range(cfg.trials):
        rng = rng_stream(cfg.seed, Stream.CALIBRATION, n, trial)
        A = random_manifold(geom, n, rng)
        target = random_attenuation(n, rng)[:, None] * sparse_source_matrix(n, cfg.columns, rng)
        X = A @ target
        e_avg = float(np.sum(np.abs(X) ** 2)) / X.size

        for k, gamma_db in enumerate(gammas_db):
            noise_var = e_avg / 10.0 ** (gamma_db / 10.0)
            errors = np.zeros(f_grid.size)
            for r in range(cfg.realizations):
                noise_rng = rng_stream(cfg.seed, Stream.CALIBRATION, n, trial, k + 1, r + 1)
                V = np.sqrt(noise_var / 2.0) * (
                    noise_rng.standard_normal(X.shape) + 1j * noise_rng.standard_normal(X.shape)
                )
                levels = solve_levels(X + V, A, min(cfg.l_max, n))
                for j, f in enumerate(f_grid):
                    eps = np.sqrt(f * M * e_avg + M * noise_var)
                    errors[j] += np.linalg.norm(select_level(levels, eps).matrix - target)
            best_log10[trial, k] = np.log10(f_grid[np.argmin(errors)])
        logger.debug("Calibration N=%d trial %d done", n, trial + 1)

    cells = []
    for k, gamma_db in enumerate(gammas_db):
        kept = _iqr_keep(best_log10[:, k])
        if kept.size < min(cfg.min_surviving, cfg.trials):
            raise CalibrationError(
                f"only {kept.size} trial(s) survived outlier removal", n=n, gamma_db=float(gamma_db)
            )
        cells.append(CalibrationCell(n, float(gamma_db), float(np.mean(kept)), int(kept.size)))
    return cells


def _fit(cells: list[CalibrationCell]) -> tuple[np.ndarray, list[CalibrationCell]]:
    x = np.array([c.gamma_db for c in cells])
    y = np.array([c.log10_f for c in cells])
    degree = min(POLY_DEGREE, x.size - 1)
    coeffs = np.zeros(POLY_DEGREE + 1)
    coeffs[: degree + 1] = P.polyfit(x, y, degree)
    fitted = P.polyval(x, coeffs)
    return coeffs, [CalibrationCell(c.n, c.gamma_db, c.log10_f, c.survivors, float(v)) for c, v in zip(cells, fitted)]


# ============================================================
# Public API
# ============================================================

def check_monotonicity(model: EpsilonModel, n_values, gamma_grid_db, tol: float = 1e-12) -> MonotonicityReport:
    """f non-increasing in gamma per N, non-decreasing in N per gamma."""
    n_values = sorted(int(n) for n in n_values)
    gammas = 10.0 ** (np.asarray(gamma_grid_db, dtype=float) / 10.0)
    table = np.array([[model.f(n, g) for g in gammas] for n in n_values])

    gamma_bad = [(n_values[i], float(gamma_grid_db[k + 1]))
                 for i, k in zip(*np.nonzero(np.diff(table, axis=1) > tol))]
    n_bad = [(n_values[i + 1], float(gamma_grid_db[k]))
             for i, k in zip(*np.nonzero(np.diff(table, axis=0) < -tol))]
    return MonotonicityReport(not gamma_bad, not n_bad, gamma_bad, n_bad)


def geometry_fingerprint(geom: ArrayGeometry) -> str:
    """Short digest of the element phase layout K D."""
    layout = np.round(geom.wave_number * geom.element_offsets, 9) + 0.0
    return hashlib.sha1(layout.tobytes()).hexdigest()[:12]


def calibration_metadata(geom: ArrayGeometry, cfg: CalibrationConfig) -> dict[str, Any]:
    return {
        "version": MODEL_VERSION,
        "kind": "calibrated",
        "degree": POLY_DEGREE,
        "trials": cfg.trials,
        "n_values": list(cfg.n_values),
        "columns": cfg.columns,
        "realizations": cfg.realizations,
        "l_max": cfg.l_max,
        "gamma_db_min": cfg.gamma_db_min,
        "gamma_db_max": cfg.gamma_db_max,
        "gamma_db_step": cfg.gamma_db_step,
        "f_grid_log10": list(cfg.f_grid_log10),
        "min_surviving": cfg.min_surviving,
        "seed": cfg.seed,
        "elements": geom.elements,
        "geometry": geometry_fingerprint(geom),
        "attenuation": "|psi|~U[0.5,1], arg~U[0,2pi)",
        "outliers": "1.5 IQR of log10 f per cell",
    }


def calibrate_f(
    geom: ArrayGeometry,
    cfg: CalibrationConfig | None = None,
    workers: int = 1,
) -> tuple[EpsilonModel, CalibrationReport]:
    """Fit the epsilon model for every N in ``cfg.n_values``."""
    cfg = cfg or CalibrationConfig()
    logger.info(
        "Calibrating N=%s over %d SNR points, %d trial(s)",
        cfg.n_values, len(cfg.gamma_grid_db()), cfg.trials,
    )

    if workers > 1 and len(cfg.n_values) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_calibrate_n, geom, n, cfg) for n in cfg.n_values]
            per_n = [f.result() for f in futures]
    else:
        per_n = [_calibrate_n(geom, n, cfg) for n in cfg.n_values]

    coefficients: dict[int, np.ndarray] = {}
    cells: list[CalibrationCell] = []
    for n, n_cells in zip(cfg.n_values, per_n):
        coefficients[n], fitted = _fit(n_cells)
        cells.extend(fitted)

    model = EpsilonModel(coefficients, calibration_metadata(geom, cfg))
    report = CalibrationReport(cells, check_monotonicity(model, cfg.n_values, cfg.gamma_grid_db()))
    model = EpsilonModel(coefficients, {
        **model.metadata,
        "max_abs_residual": round(report.max_abs_residual, 6),
        "monotone": report.monotonicity.passed,
    })
    logger.info(
        "Calibration done: max |residual| %.3f, monotone=%s",
        report.max_abs_residual, report.monotonicity.passed,
    )
    return model, report


# ============================================================
# Model resolution
# ============================================================

def calibration_settings(refiner: RefinerConfig, calibration: CalibrationConfig) -> CalibrationConfig:
    """Calibration settings with the sparsity cap of the refiner that uses the model."""
    return calibration.model_copy(update={"l_max": refiner.l_max})


def cached_model_path(geom: ArrayGeometry, cache_dir: Optional[str | Path] = None) -> Path:
    root = Path(cache_dir).expanduser() if cache_dir else DEFAULT_CACHE_DIR
    return root / f"epsilon_model_{geometry_fingerprint(geom)}.csv"


def matches_calibration(model: EpsilonModel, geom: ArrayGeometry, cfg: CalibrationConfig) -> bool:
    expected = json.loads(json.dumps(calibration_metadata(geom, cfg)))
    return all(model.metadata.get(key) == value for key, value in expected.items())


def resolve_epsilon_model(
    geom: ArrayGeometry,
    refiner: RefinerConfig,
    calibration: CalibrationConfig,
    workers: int = 1,
) -> EpsilonModel:
    """
    The epsilon model a run uses.

    An explicit ``refiner.epsilon_model`` file wins. Otherwise the cached
    calibration for this array is loaded; it is fitted and written first when
    the cache is missing or was fitted with other settings.
    """
    if refiner.epsilon_model:
        return EpsilonModel.from_csv(refiner.epsilon_model)

    cfg = calibration_settings(refiner, calibration)
    path = cached_model_path(geom, refiner.model_cache_dir)
    if path.exists():
        try:
            model = EpsilonModel.from_csv(path)
        except ConfigurationError as e:
            logger.warning("Ignoring cached epsilon model: %s", e)
        else:
            if matches_calibration(model, geom, cfg):
                logger.debug("Using cached epsilon model %s", path)
                return model
            logger.info("Cached epsilon model %s was fitted with other settings", path)

    logger.info(
        "No epsilon model calibrated for this array yet; calibrating N=%s with %d trial(s)",
        cfg.n_values, cfg.trials,
    )
    model, _ = calibrate_f(geom, cfg, workers=workers)
    model.to_csv(path)
    logger.info("Epsilon model cached at %s", path)
    return model
