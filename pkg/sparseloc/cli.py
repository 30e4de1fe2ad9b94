"""
Command-line entry point: ``python -m sparseloc <command>``.

Commands: synth, run, heatmap, calibrate-f, compare-detectors,
analyze-bound, schema. Exit codes: 0 ok, 1 configuration error, 2 fatal
module error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import compare_detectors
from .calibration import cached_model_path, calibrate_f, calibration_settings
from .config import RunConfig
from .detector import detect
from .errors import ConfigurationError, SparselocError
from .export import (
    plot_comparison,
    plot_heatmap,
    write_bound_csv,
    write_calibration_report,
    write_capture,
    write_capture_csv,
    write_comparison_csv,
    write_detection_csv,
    write_heatmap_csv,
    write_map_csv,
    write_run_outputs,
    write_spectrum_csv,
)
from .localization import bound_table, map_relief
from .logger import RunLogger
from .pipeline import build_city, build_geometry, heatmap_sweep, simulate, summarize, synthesize_captures
from .rough_aoa import AngleGrid, mdl_order, music_spectrum, sample_covariance

logger = logging.getLogger("sparseloc.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FATAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseloc", description="Multi-source AOA localization simulator")
    parser.add_argument("--config", help="YAML configuration (default: discovered config.yaml)")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a config value, e.g. --set noise.snr_star_db=10",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More log output (-vv for debug)")
    parser.add_argument("--quiet", action="store_true", help="Only warnings and errors")
    parser.add_argument("--out", help="Output directory (default: output.directory)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Synthesize sample blocks and the map")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--diagnostics", action="store_true", help="Also write detector and MUSIC tables per window")

    sub.add_parser("run", help="Run the full pipeline over all trials")

    p = sub.add_parser("heatmap", help="Single-source localization RMSE over a grid")
    p.add_argument("--step", type=float, help="Grid step in meters")

    p = sub.add_parser("calibrate-f", help="Fit the residual-budget model")
    p.add_argument("--n", type=int, nargs="+", help="Source counts to calibrate")
    p.add_argument("--trials", type=int, help="Trials per (N, SNR) cell")
    p.add_argument("--workers", type=int, default=1)

    sub.add_parser("compare-detectors", help="False-detection comparison at matched output size")

    p = sub.add_parser("analyze-bound", help="Worst-case RMSE table of the height approximation")
    p.add_argument("--dz-max", type=float, help="Height relief (default: from the configured map)")
    p.add_argument("--theta-step", type=float, default=10.0, help="Elevation step in degrees")
    p.add_argument("--dphi-step", type=float, default=30.0, help="Azimuth separation step in degrees")

    sub.add_parser("schema", help="Print the configuration JSON schema")
    return parser


def configure_logging(verbose: int, quiet: bool):
    level = logging.WARNING if quiet else (logging.DEBUG if verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_yaml(args.config) if args.config else RunConfig.load()
    if args.overrides:
        cfg = cfg.with_overrides(args.overrides)
    return cfg


# ============================================================
# Commands
# ============================================================

def cmd_synth(cfg: RunConfig, out: Path, args: argparse.Namespace) -> None:
    scene, captures = synthesize_captures(cfg, args.trial)
    write_map_csv(out / "map.csv", scene.city)
    for capture in captures:
        write_capture(out / f"window_{capture.window_index}.bin", capture)
        if capture.samples.shape[1] <= cfg.output.capture_csv_max_columns:
            write_capture_csv(out / f"window_{capture.window_index}.csv", capture)
        if args.diagnostics:
            write_window_diagnostics(cfg, out, scene.geometry, capture)
    print(f"Wrote {len(captures)} window(s) to {out}")


def write_window_diagnostics(cfg: RunConfig, out: Path, geom, capture) -> None:
    """Detector selection and MUSIC spectrum of one capture."""
    i = capture.window_index
    detection = detect(capture.samples, cfg.detector)
    write_detection_csv(out / f"detection_{i}.csv", detection)
    if detection.is_empty:
        logger.info("Window %d: no detections, no spectrum", i)
        return
    R = sample_covariance(detection.filtered)
    order = mdl_order(np.linalg.eigvalsh(R), detection.kept_count, cfg.rough_aoa.eig_floor, cfg.rough_aoa.eig_rel_floor)
    grid = AngleGrid.uniform(cfg.rough_aoa.grid_step_deg, cfg.rough_aoa.theta_range_deg)
    write_spectrum_csv(out / f"spectrum_{i}.csv", music_spectrum(R, min(order, geom.elements - 1), geom, grid))


def cmd_run(cfg: RunConfig, out: Path, run_logger: RunLogger) -> None:
    results = simulate(cfg, run_logger)
    report = summarize(cfg, results)
    write_run_outputs(out, results, report, plots=cfg.output.plots)
    final = report.localization_rmse_m[-1]
    print(f"Trials: {report.trials}  reliable tracks: {report.reliable_tracks}")
    print(f"Final localization RMSE: {'n/a' if final is None else f'{final:.3f} m'}")


def cmd_heatmap(cfg: RunConfig, out: Path, args: argparse.Namespace) -> None:
    result = heatmap_sweep(cfg, args.step)
    write_heatmap_csv(out / "heatmap.csv", result)
    if cfg.output.plots:
        plot_heatmap(out / "heatmap.svg", result)
    print(f"Heat map: {result.rmse.size} cell(s), mean RMSE {np.nanmean(result.rmse):.3f} m")


def cmd_calibrate(cfg: RunConfig, out: Path, args: argparse.Namespace) -> None:
    overrides = []
    if args.n:
        overrides.append(f"calibration.n_values={sorted(set(args.n))}")
    if args.trials:
        overrides.append(f"calibration.trials={args.trials}")
    if overrides:
        cfg = cfg.with_overrides(overrides)
    geom = build_geometry(cfg)
    model, report = calibrate_f(geom, calibration_settings(cfg.refiner, cfg.calibration), workers=args.workers)
    model.to_csv(out / "epsilon_model.csv")
    cached = model.to_csv(cached_model_path(geom, cfg.refiner.model_cache_dir))
    print(f"Epsilon model written to {out / 'epsilon_model.csv'} and cached at {cached}")
    write_calibration_report(out / "calibration_report.json", report)
    mono = report.monotonicity
    print(f"Max |fit residual| (log10 f): {report.max_abs_residual:.4f}")
    print(f"non-increasing in gamma: {'PASS' if mono.non_increasing_in_gamma else 'FAIL'}")
    print(f"non-decreasing in N:     {'PASS' if mono.non_decreasing_in_n else 'FAIL'}")


def cmd_compare(cfg: RunConfig, out: Path) -> None:
    rows = compare_detectors(cfg)
    write_comparison_csv(out / "detectors.csv", rows)
    if cfg.output.plots:
        plot_comparison(out / "detectors.svg", rows)
    print(f"Wrote {len(rows)} comparison row(s)")


def cmd_bound(cfg: RunConfig, out: Path, args: argparse.Namespace) -> None:
    dz_max = args.dz_max if args.dz_max is not None else map_relief(build_city(cfg))
    thetas = np.radians(np.arange(args.theta_step, 90.0, args.theta_step))
    dphis = np.radians(np.arange(0.0, 180.0 + 1e-9, args.dphi_step))
    rows = bound_table(thetas, dphis, dz_max)
    write_bound_csv(out / "bound.csv", rows)
    print(f"Wrote {len(rows)} bound row(s) (dz_max={dz_max:.2f} m)")


# ============================================================
# Main
# ============================================================

def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    if args.command == "schema":
        print(json.dumps(RunConfig.model_json_schema(), indent=2))
        return EXIT_OK

    try:
        cfg = load_config(args)
    except (ConfigurationError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG

    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_yaml(out / "config.yaml")

    run_logger = RunLogger(log_dir=cfg.output.log_dir)
    run_logger.start_run(args.command, cfg.monte_carlo.seed, cfg.model_dump(mode="json"))
    try:
        if args.command == "synth":
            cmd_synth(cfg, out, args)
        elif args.command == "run":
            cmd_run(cfg, out, run_logger)
        elif args.command == "heatmap":
            cmd_heatmap(cfg, out, args)
        elif args.command == "calibrate-f":
            cmd_calibrate(cfg, out, args)
        elif args.command == "compare-detectors":
            cmd_compare(cfg, out)
        elif args.command == "analyze-bound":
            cmd_bound(cfg, out, args)
    except ConfigurationError as e:
        logger.error("%s", e)
        run_logger.end_run("failed", str(e))
        return EXIT_CONFIG
    except SparselocError as e:
        logger.error("%s", e)
        run_logger.end_run("failed", str(e))
        return EXIT_FATAL

    run_logger.end_run("completed")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
