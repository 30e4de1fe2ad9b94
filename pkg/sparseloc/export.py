"""
File outputs: CSV tables, binary sample blocks and SVG plots.

Binary capture layout (little endian):
    u4 M, u4 G, u4 window index, f8 midpoint time
    then M x G complex samples, row-major, interleaved f8 re/im
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ArgumentError  # noqa: E402
from .schema import MetricsReport  # noqa: E402

if TYPE_CHECKING:
    from .baselines import ComparisonRow
    from .calibration import CalibrationReport
    from .detector import DetectionResult
    from .pipeline import HeatmapResult, TrialResult
    from .rough_aoa import MusicSpectrum
    from .scene import CityMap
    from .synthesis import WindowCapture

logger = logging.getLogger("sparseloc.export")

_HEADER = np.dtype([("m", "<u4"), ("g", "<u4"), ("i", "<u4"), ("t", "<f8")])


def _fmt(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value)) if np.isfinite(value) else str(float(value))
    return value


def write_rows(path: str | Path, fieldnames: Sequence[str], rows: Iterable[dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})
    return path


# ============================================================
# Captures
# ============================================================

@dataclass(frozen=True, eq=False)
class StoredCapture:
    samples: np.ndarray
    window_index: int
    midpoint_time: float


def write_capture(path: str | Path, capture: "WindowCapture") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    M, G = capture.samples.shape
    header = np.array([(M, G, capture.window_index, capture.midpoint_time)], dtype=_HEADER)
    body = np.ascontiguousarray(capture.samples, dtype="<c16")
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(body.tobytes())
    return path


def read_capture(path: str | Path) -> StoredCapture:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.itemsize:
        raise ArgumentError(f"{path}: truncated capture header")
    header = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    M, G = int(header["m"]), int(header["g"])
    body = np.frombuffer(raw[_HEADER.itemsize:], dtype="<c16")
    if body.size != M * G:
        raise ArgumentError(f"{path}: expected {M * G} samples, found {body.size}")
    return StoredCapture(body.reshape(M, G).astype(complex), int(header["i"]), float(header["t"]))


def write_capture_csv(path: str | Path, capture: "WindowCapture") -> Path:
    """One row per sample column: g, then re/im per element."""
    M = capture.samples.shape[0]
    fields = ["g"] + [f"{part}{m}" for m in range(M) for part in ("re", "im")]
    rows = []
    for g, column in enumerate(capture.samples.T, start=1):
        row = {"g": g}
        for m, v in enumerate(column):
            row[f"re{m}"], row[f"im{m}"] = v.real, v.imag
        rows.append(row)
    return write_rows(path, fields, rows)


def write_map_csv(path: str | Path, city: "CityMap") -> Path:
    """Height grid, rows along y; the comment line holds origin and cell size."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"origin": [float(v) for v in city.origin], "cell_size": city.cell_size}
    np.savetxt(path, city.grid, delimiter=",", fmt="%.4f", header=json.dumps(meta))
    return path


# ============================================================
# Per-module tables
# ============================================================

def write_detection_csv(path: str | Path, detection: "DetectionResult") -> Path:
    energy = np.sum(np.abs(detection.filtered) ** 2, axis=0)
    rows = [{"column": int(c), "energy": float(e)} for c, e in zip(detection.kept_indices, energy)]
    return write_rows(path, ["column", "energy"], rows)


def write_spectrum_csv(path: str | Path, spectrum: "MusicSpectrum") -> Path:
    theta, phi = np.meshgrid(spectrum.grid.elevations, spectrum.grid.azimuths, indexing="ij")
    rows = (
        {"theta_deg": np.degrees(t), "phi_deg": np.degrees(p), "value": v}
        for t, p, v in zip(theta.ravel(), phi.ravel(), spectrum.values.ravel())
    )
    return write_rows(path, ["theta_deg", "phi_deg", "value"], rows)


# ============================================================
# Run outputs
# ============================================================

WINDOW_FIELDS = [
    "window", "trial", "n_kept", "noise_var_hat", "noise_var",
    "gamma_hat", "gamma", "n_rough", "n_refined", "status",
]


def write_windows_csv(path: str | Path, results: Sequence["TrialResult"]) -> Path:
    rows = []
    for res in results:
        for o in res.outcomes:
            rows.append({"window": o.window, "trial": res.trial, "status": o.status.value, **o.data})
    return write_rows(path, WINDOW_FIELDS, rows)


def write_aoas_csv(path: str | Path, results: Sequence["TrialResult"]) -> Path:
    rows = [
        {
            "trial": res.trial,
            "window": w,
            "tag": str(a.tag),
            "theta_deg": np.degrees(a.theta),
            "phi_deg": np.degrees(a.phi),
        }
        for res in results
        for w, aoas in enumerate(res.aoas, start=1)
        for a in aoas
    ]
    return write_rows(path, ["trial", "window", "tag", "theta_deg", "phi_deg"], rows)


def write_tracks_csv(path: str | Path, results: Sequence["TrialResult"]) -> Path:
    rows = []
    for res in results:
        for w, snapshots in enumerate(res.tracks, start=1):
            for s in snapshots:
                x, y, z = (None, None, None) if s.position is None else s.position
                rows.append({
                    "trial": res.trial, "window": w, "id": s.ident,
                    "x": x, "y": y, "z": z,
                    "reliability": s.reliability, "hist": s.hist,
                })
    return write_rows(path, ["trial", "window", "id", "x", "y", "z", "reliability", "hist"], rows)


def write_summary(path: str | Path, report: MetricsReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return path


def write_run_outputs(
    directory: str | Path,
    results: Sequence["TrialResult"],
    report: MetricsReport,
    plots: bool = True,
) -> list[Path]:
    directory = Path(directory)
    written = [
        write_windows_csv(directory / "windows.csv", results),
        write_aoas_csv(directory / "aoas.csv", results),
        write_tracks_csv(directory / "tracks.csv", results),
        write_summary(directory / "summary.json", report),
    ]
    if plots:
        written.extend(plot_report(directory, report))
    logger.info("Wrote %d run output file(s) to %s", len(written), directory)
    return written


# ============================================================
# Other commands
# ============================================================

def write_heatmap_csv(path: str | Path, result: "HeatmapResult") -> Path:
    rows = [
        {"x": x, "y": y, "rmse": result.rmse[iy, ix], "e_max": result.e_max[iy, ix]}
        for iy, y in enumerate(result.ys)
        for ix, x in enumerate(result.xs)
    ]
    return write_rows(path, ["x", "y", "rmse", "e_max"], rows)


def write_comparison_csv(path: str | Path, rows: Sequence["ComparisonRow"]) -> Path:
    return write_rows(
        path,
        ["detector", "snr_star_db", "mean_inter_pulse", "n_in_sig", "n_out", "p_false"],
        ({**r.__dict__, "detector": r.detector.value} for r in rows),
    )


def write_bound_csv(path: str | Path, rows: Sequence[dict[str, float]]) -> Path:
    return write_rows(path, ["theta_deg", "dphi_deg", "norm2_cb", "e_max"], rows)


def write_calibration_report(path: str | Path, report: "CalibrationReport") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mono = report.monotonicity
    payload = {
        "max_abs_residual": report.max_abs_residual,
        "non_increasing_in_gamma": mono.non_increasing_in_gamma,
        "non_decreasing_in_n": mono.non_decreasing_in_n,
        "gamma_violations": mono.gamma_violations,
        "n_violations": mono.n_violations,
        "cells": [
            {"n": c.n, "gamma_db": c.gamma_db, "log10_f": c.log10_f, "fitted": c.fitted, "survivors": c.survivors}
            for c in report.cells
        ],
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


# ============================================================
# Plots
# ============================================================

def _series(values: Sequence[Optional[float]]) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return path


def plot_report(directory: str | Path, report: MetricsReport) -> list[Path]:
    directory = Path(directory)
    w = np.array(report.windows)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(w, _series(report.elevation_rmse_deg), "o-", label="elevation")
    ax.plot(w, _series(report.azimuth_rmse_deg), "s-", label="azimuth")
    ax.set_xlabel("window")
    ax.set_ylabel("RMSE [deg]")
    ax.legend()
    ax.grid(True, alpha=0.3)
    paths.append(_save(fig, directory / "aoa_rmse.svg"))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(w, _series(report.localization_rmse_m), "o-")
    ax.set_xlabel("window")
    ax.set_ylabel("localization RMSE [m]")
    ax.grid(True, alpha=0.3)
    paths.append(_save(fig, directory / "localization_rmse.svg"))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(1, len(report.source_reliability) + 1), report.source_reliability)
    ax.set_xlabel("source")
    ax.set_ylabel("reliability")
    ax.set_ylim(0, 1)
    paths.append(_save(fig, directory / "reliability.svg"))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(w, _series(report.noise_var_ratio), "o-")
    ax1.axhline(1.0, color="k", lw=0.8)
    ax1.set_ylabel("noise var ratio")
    ax2.plot(w, _series(report.inst_snr_error_db), "o-")
    ax2.set_ylabel("|SNR error| [dB]")
    ax2.set_xlabel("window")
    paths.append(_save(fig, directory / "detector_tracking.svg"))
    return paths


def plot_heatmap(path: str | Path, result: "HeatmapResult") -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(result.xs, result.ys, result.rmse, shading="nearest")
    fig.colorbar(mesh, ax=ax, label="RMSE [m]")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    return _save(fig, Path(path))


def plot_comparison(path: str | Path, rows: Sequence["ComparisonRow"]) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind in sorted({r.detector for r in rows}, key=lambda k: k.value):
        pts = [(r.snr_star_db, np.nan if r.p_false is None else r.p_false) for r in rows if r.detector == kind]
        x, y = np.array(pts).T
        ax.plot(x, y, "o-", label=kind.value)
    ax.set_xlabel("SNR* [dB]")
    ax.set_ylabel("false detection probability")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, Path(path))
