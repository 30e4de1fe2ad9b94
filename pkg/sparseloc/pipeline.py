"""
Window-by-window processing chain and Monte-Carlo harness.

Every window passes through the same ordered stages:
synthesis -> detection -> rough AOA -> initialization -> refinement -> localization

Each stage reads and extends a WindowContext. A stage may stop the chain
with a legal per-window condition (no detections, nothing to refine); the
window is then recorded and the tracker still counts it. Any other error is
fatal for the run.
"""

from __future__ import annotations

import logging
import time
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calibration import resolve_epsilon_model
from .config import RunConfig
from .detector import DetectionResult, detect, true_inst_snr
from .errors import FatalStageError, NoDetectionsError, NothingToRefineError
from .localization import TrackerState, assign_and_update, bank_from_tracker, worst_case_rmse
from .logger import RunLogger
from .manifold import ManifoldEstimate, gate_new_directions, initial_manifold
from .metrics import aoa_window_errors, localization_rmse, match_positions, rmse
from .refiner import RefinedAoa, read_aoas, refine_manifold
from .rough_aoa import (
    AngleGrid,
    grid_steering,
    mdl_order,
    music_spectrum,
    pick_peaks,
    rough_directions,
    sample_covariance,
)
from .scene import (
    ArrayGeometry,
    CityMap,
    Scene,
    Trajectory,
    array_position_at,
    build_city_map,
    place_sources,
    sample_rooftop_sources,
    uniform_circular_array,
    window_midpoint,
)
from .schema import ColumnTag, MetricsReport, PipelineStage, RuntimeStats, WindowOutcome, WindowStatus
from .sparse import EpsilonModel
from .synthesis import (
    NoiseModel,
    PulseTrain,
    Stream,
    WindowCapture,
    angles_of,
    noise_variance_for_snr_star,
    rng_stream,
    scene_pulse_trains,
    synthesize_window,
    true_angles,
)

logger = logging.getLogger("sparseloc.pipeline")


# ============================================================
# Scene construction
# ============================================================

def build_geometry(cfg: RunConfig) -> ArrayGeometry:
    return uniform_circular_array(cfg.array.elements, cfg.array.radius, cfg.array.carrier_freq)


def epsilon_model_for(cfg: RunConfig) -> EpsilonModel:
    return resolve_epsilon_model(
        build_geometry(cfg), cfg.refiner, cfg.calibration, workers=cfg.monte_carlo.workers
    )


def build_city(cfg: RunConfig) -> CityMap:
    sc = cfg.scene
    if sc.flat:
        return CityMap.flat(sc.extent, cell_size=max(sc.cell_size, 1.0))
    return build_city_map(
        sc.seed,
        sc.extent,
        building_dims=sc.building_dims,
        height_range=sc.height_range,
        cell_size=sc.cell_size,
        street_width=sc.street_width,
        offset_fraction=sc.offset_fraction,
    )


def build_sources(cfg: RunConfig, city: CityMap):
    src = cfg.sources
    pulse = dict(
        pulse_duration=src.pulse_duration,
        pulse_power=src.pulse_power,
        mean_inter_pulse=src.mean_inter_pulse,
    )
    if src.placement == "rooftop":
        return sample_rooftop_sources(city, src.count, cfg.scene.seed, **pulse)
    sources = place_sources(city, [p[:2] for p in src.positions], **pulse)
    explicit_z = [k for k, p in enumerate(src.positions) if len(p) == 3]
    if not explicit_z:
        return sources
    positions = sources.positions.copy()
    for k in explicit_z:
        positions[k, 2] = src.positions[k][2]
    return type(sources)(positions, sources.pulse_duration, sources.pulse_power, sources.mean_inter_pulse)


def build_scene(cfg: RunConfig, trial: int = 0, city: Optional[CityMap] = None) -> Scene:
    """Scene of one Monte-Carlo trial; pose errors are drawn per trial."""
    city = city if city is not None else build_city(cfg)
    tr = cfg.trajectory
    trajectory = Trajectory(
        np.asarray(tr.initial_position, dtype=float),
        np.asarray(tr.velocity, dtype=float),
        tr.start_time,
        tr.window_duration,
        tr.window_count,
    )
    imp = cfg.imperfections
    rng = rng_stream(cfg.monte_carlo.seed, Stream.POSE, trial)
    yaw = rng.normal(0.0, np.radians(imp.yaw_sd_deg), tr.window_count)
    offsets = rng.normal(0.0, imp.position_sd, (tr.window_count, 3))
    return Scene(
        city=city,
        geometry=build_geometry(cfg),
        trajectory=trajectory,
        sources=build_sources(cfg, city),
        sample_rate=cfg.array.sample_rate,
        yaw_errors=yaw if imp.yaw_error else np.zeros(0),
        position_errors=offsets if imp.position_error else np.zeros((0, 3)),
    )


def trial_seeds(seed: int, trial: int) -> tuple[int, int]:
    """(pulse seed, noise seed) of a trial."""
    state = np.random.SeedSequence([seed, trial]).generate_state(2)
    return int(state[0]), int(state[1])


def trial_noise(cfg: RunConfig, scene: Scene, trial: int) -> tuple[NoiseModel, list[PulseTrain]]:
    """Noise model at the configured SNR* and the per-source pulse trains."""
    pulse_seed, noise_seed = trial_seeds(cfg.monte_carlo.seed, trial)
    variance = 0.0
    if cfg.noise.enabled:
        variance = noise_variance_for_snr_star(scene.sources, scene.trajectory.initial_position, cfg.noise.snr_star_db)
    return NoiseModel(variance, noise_seed), scene_pulse_trains(scene, pulse_seed)


# ============================================================
# Contexts
# ============================================================

@dataclass
class TrialContext:
    """State shared by every window of one trial."""

    cfg: RunConfig
    trial: int
    scene: Scene
    noise: NoiseModel
    pulse_trains: list[PulseTrain]
    geometry: ArrayGeometry
    localizer_map: CityMap
    grid: AngleGrid
    steering: np.ndarray
    model: EpsilonModel
    tracker: TrackerState

    @classmethod
    def create(
        cls,
        cfg: RunConfig,
        trial: int = 0,
        city: Optional[CityMap] = None,
        model: Optional[EpsilonModel] = None,
    ) -> "TrialContext":
        scene = build_scene(cfg, trial, city)
        noise, trains = trial_noise(cfg, scene, trial)
        grid = AngleGrid.uniform(cfg.rough_aoa.grid_step_deg, cfg.rough_aoa.theta_range_deg)
        return cls(
            cfg=cfg,
            trial=trial,
            scene=scene,
            noise=noise,
            pulse_trains=trains,
            geometry=scene.geometry,
            localizer_map=scene.city.flattened() if cfg.imperfections.drop_map else scene.city,
            grid=grid,
            steering=grid_steering(scene.geometry, grid),
            model=model if model is not None else epsilon_model_for(cfg),
            tracker=TrackerState.from_config(cfg.tracker),
        )


@dataclass
class WindowContext:
    index: int
    capture: Optional[WindowCapture] = None
    detection: Optional[DetectionResult] = None
    order: int = 0
    rough: np.ndarray = field(default_factory=lambda: np.zeros((3, 0)))
    initial: Optional[ManifoldEstimate] = None
    refined: Optional[ManifoldEstimate] = None
    aoas: list[RefinedAoa] = field(default_factory=list)


# ============================================================
# Stages
# ============================================================

class Stage(ABC):
    stage: PipelineStage

    def __init__(self, trial: TrialContext):
        self.trial = trial

    @abstractmethod
    def run(self, window: WindowContext) -> WindowContext:
        pass


class SynthesisStage(Stage):
    stage = PipelineStage.SYNTHESIS

    def run(self, window: WindowContext) -> WindowContext:
        t = self.trial
        window.capture = synthesize_window(
            t.scene, t.noise, window.index, pulse_trains=t.pulse_trains, keep_components=True
        )
        return window


class DetectionStage(Stage):
    stage = PipelineStage.DETECTION

    def run(self, window: WindowContext) -> WindowContext:
        window.detection = detect(window.capture.samples, self.trial.cfg.detector)
        if window.detection.is_empty:
            raise NoDetectionsError("energy detector kept no columns")
        return window


class RoughAoaStage(Stage):
    stage = PipelineStage.ROUGH_AOA

    def run(self, window: WindowContext) -> WindowContext:
        t, cfg = self.trial, self.trial.cfg.rough_aoa
        R = sample_covariance(window.detection.filtered)
        window.order = mdl_order(
            np.linalg.eigvalsh(R), window.detection.kept_count, cfg.eig_floor, cfg.eig_rel_floor
        )
        if window.order > 0:
            spectrum = music_spectrum(R, window.order, t.geometry, t.grid, t.steering)
            window.rough = rough_directions(pick_peaks(spectrum, window.order))
        return window


class InitializationStage(Stage):
    stage = PipelineStage.INITIALIZATION

    def run(self, window: WindowContext) -> WindowContext:
        t = self.trial
        if not t.cfg.refiner.enabled:
            return window
        r_i = window.capture.array_pose.position
        bank = bank_from_tracker(t.tracker, r_i)
        keep = gate_new_directions(window.rough, bank, t.cfg.tracker.xi)
        window.initial = initial_manifold(bank, window.rough[:, keep], t.geometry)
        return window


class RefinementStage(Stage):
    stage = PipelineStage.REFINEMENT

    def run(self, window: WindowContext) -> WindowContext:
        t, cfg = self.trial, self.trial.cfg.refiner
        if not cfg.enabled:
            window.aoas = self._open_loop(window)
            return window
        window.refined = refine_manifold(
            window.detection.filtered, window.initial, window.detection, t.model, cfg
        )
        if window.refined.is_empty:
            raise NothingToRefineError("no refinable sources")
        window.aoas = read_aoas(window.refined, t.grid, t.geometry, t.steering, polish=cfg.polish)
        return window

    @staticmethod
    def _open_loop(window: WindowContext) -> list[RefinedAoa]:
        return [RefinedAoa(ColumnTag.new(k), *angles_of(window.rough[:, k])) for k in range(window.rough.shape[1])]


class LocalizationStage(Stage):
    stage = PipelineStage.LOCALIZATION

    def run(self, window: WindowContext) -> WindowContext:
        dirs = np.column_stack([a.direction for a in window.aoas]) if window.aoas else np.zeros((3, 0))
        self.update(window, dirs)
        return window

    def update(self, window: WindowContext, directions: np.ndarray):
        t = self.trial
        assign_and_update(
            t.tracker,
            directions,
            window.capture.array_pose.position,
            window.capture.midpoint_time,
            t.localizer_map,
            t.cfg.tracker.xi,
            t.cfg.localizer,
        )


def default_stages(trial: TrialContext) -> list[Stage]:
    return [
        SynthesisStage(trial),
        DetectionStage(trial),
        RoughAoaStage(trial),
        InitializationStage(trial),
        RefinementStage(trial),
        LocalizationStage(trial),
    ]


# ============================================================
# Per-trial orchestration
# ============================================================

@dataclass(frozen=True)
class TrackSnapshot:
    ident: int
    position: Optional[np.ndarray]
    reliability: float
    hist: int


@dataclass
class TrialResult:
    trial: int
    outcomes: list[WindowOutcome] = field(default_factory=list)
    aoas: list[list[RefinedAoa]] = field(default_factory=list)
    truth_angles: list[np.ndarray] = field(default_factory=list)  # (N, 2) per window
    tracks: list[list[TrackSnapshot]] = field(default_factory=list)
    source_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    seconds: float = 0.0


_LEGAL_STATUS = {
    (NoDetectionsError, PipelineStage.DETECTION): WindowStatus.NO_DETECTIONS,
    (NoDetectionsError, PipelineStage.ROUGH_AOA): WindowStatus.NO_DETECTIONS,
    (NothingToRefineError, PipelineStage.INITIALIZATION): WindowStatus.NOTHING_TO_REFINE,
    (NothingToRefineError, PipelineStage.REFINEMENT): WindowStatus.NO_REFINABLE_SOURCES,
}


class WindowPipeline:
    """Runs every window of one trial through the stage chain."""

    def __init__(self, trial: TrialContext, stages: Optional[list[Stage]] = None):
        self.trial = trial
        self.stages = stages or default_stages(trial)
        self._localizer = next(s for s in self.stages if isinstance(s, LocalizationStage))

    def run_window(self, index: int) -> tuple[WindowContext, WindowOutcome]:
        window = WindowContext(index)
        started = time.perf_counter()
        status, failed, message = WindowStatus.OK, None, None

        for stage in self.stages:
            try:
                window = stage.run(window)
            except (NoDetectionsError, NothingToRefineError) as e:
                status = _LEGAL_STATUS[(type(e), stage.stage)]
                failed, message = stage.stage, str(e)
                logger.info("Window %d stopped at %s: %s", index, stage.stage.value, e)
                self._localizer.update(window, np.zeros((3, 0)))
                break
            except Exception as e:
                raise FatalStageError(stage.stage.value, index, e) from e

        outcome = WindowOutcome(
            window=index,
            success=status == WindowStatus.OK,
            status=status,
            stage=failed,
            error=message,
            data=self._summary(window, time.perf_counter() - started),
        )
        return window, outcome

    def _summary(self, window: WindowContext, seconds: float) -> dict:
        det, cap = window.detection, window.capture
        data = {
            "n_kept": det.kept_count if det else 0,
            "noise_var_hat": det.noise_var if det else None,
            "noise_var": self.trial.noise.variance,
            "gamma_hat": det.inst_snr if det else None,
            "gamma": true_inst_snr(cap.clean, cap.noise, det.kept_indices) if det and not det.is_empty else None,
            "n_rough": int(window.rough.shape[1]),
            "n_refined": len(window.aoas),
            "detector_iterations": det.iterations if det else None,
            "refiner_iterations": window.refined.iterations if window.refined else None,
            "refiner_fit_residual": window.refined.fit_residual if window.refined else None,
            "seconds": seconds,
        }
        t_mid = cap.midpoint_time
        solved = [
            tr.solve_iterations for tr in self.trial.tracker.tracks.values()
            if tr.last_seen == t_mid and not tr.pending
        ]
        data["localizer_iterations"] = float(np.mean(solved)) if solved else None
        return data

    def run(self) -> TrialResult:
        t = self.trial
        result = TrialResult(trial=t.trial, source_positions=np.array(t.scene.sources.positions))
        started = time.perf_counter()
        for i in range(1, t.scene.trajectory.window_count + 1):
            window, outcome = self.run_window(i)
            result.outcomes.append(outcome)
            result.aoas.append(window.aoas)
            theta, phi = true_angles(t.scene.sources, window.capture.true_position)
            result.truth_angles.append(np.column_stack([np.atleast_1d(theta), np.atleast_1d(phi)]))
            result.tracks.append([
                TrackSnapshot(
                    tr.ident,
                    None if tr.pending else np.array(tr.position),
                    tr.reliability,
                    tr.hist,
                )
                for tr in t.tracker.tracks.values()
            ])
        result.seconds = time.perf_counter() - started
        logger.info(
            "Trial %d: %d windows, %d track(s) in %.2f s",
            t.trial, len(result.outcomes), len(t.tracker.active()), result.seconds,
        )
        return result


def run_trial(
    cfg: RunConfig,
    trial: int = 0,
    city: Optional[CityMap] = None,
    model: Optional[EpsilonModel] = None,
) -> TrialResult:
    return WindowPipeline(TrialContext.create(cfg, trial, city, model)).run()


def _trial_job(args: tuple[RunConfig, int, EpsilonModel]) -> TrialResult:
    cfg, trial, model = args
    return run_trial(cfg, trial, model=model)


def simulate(cfg: RunConfig, run_logger: Optional[RunLogger] = None) -> list[TrialResult]:
    """All Monte-Carlo trials, reduced in trial order."""
    mc = cfg.monte_carlo
    model = epsilon_model_for(cfg)
    if mc.workers > 1 and mc.trials > 1:
        with ProcessPoolExecutor(max_workers=mc.workers) as pool:
            results = list(pool.map(_trial_job, [(cfg, k, model) for k in range(mc.trials)]))
    else:
        city = build_city(cfg)
        results = [run_trial(cfg, k, city, model) for k in range(mc.trials)]

    if run_logger is not None:
        for result in results:
            for outcome in result.outcomes:
                if outcome.success:
                    run_logger.log_window(result.trial, outcome.window, outcome.data)
                else:
                    run_logger.log_window_error(result.trial, outcome.window, outcome.stage.value, outcome.error)
            run_logger.log_trial_end(result.trial, {"seconds": result.seconds})
    return results


# ============================================================
# Reduction
# ============================================================

def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(values)) if values else None


def _reliable_positions(snapshots: list[TrackSnapshot], threshold: float) -> np.ndarray:
    pts = [s.position for s in snapshots if s.position is not None and s.reliability > threshold]
    return np.array(pts).reshape(-1, 3)


def summarize(cfg: RunConfig, results: list[TrialResult]) -> MetricsReport:
    m = cfg.metrics
    windows = cfg.trajectory.window_count
    threshold = np.radians(m.angle_threshold_deg)

    d_theta = [[] for _ in range(windows)]
    d_phi = [[] for _ in range(windows)]
    loc_errors = [[] for _ in range(windows)]
    matched, missed, spurious = [0] * windows, [0] * windows, [0] * windows
    n_sources = results[0].source_positions.shape[0] if results else 0
    reliability = np.zeros(n_sources)
    reliable_counts = []
    status_counts: dict[str, int] = {}

    for res in results:
        estimates = [np.array([(a.theta, a.phi) for a in aoas]).reshape(-1, 2) for aoas in res.aoas]
        for w, match in enumerate(aoa_window_errors(estimates, res.truth_angles, threshold, m.min_detection_fraction)):
            d_theta[w].extend(match.d_theta)
            d_phi[w].extend(match.d_phi)

        tracks = [_reliable_positions(s, m.reliability_threshold) for s in res.tracks]
        _, matches = localization_rmse(tracks, res.source_positions, m.position_radius)
        for w, pm in enumerate(matches):
            loc_errors[w].extend(pm.errors)
            matched[w] += pm.matched
            missed[w] += pm.missed
            spurious[w] += pm.spurious

        final = [s for s in res.tracks[-1] if s.position is not None]
        if final:
            fm = match_positions(np.array([s.position for s in final]), res.source_positions, m.position_radius)
            for i, j in fm.pairs:
                reliability[j] += final[i].reliability
        reliable_counts.append(sum(s.reliability > m.reliability_threshold for s in final))

        for o in res.outcomes:
            status_counts[o.status.value] = status_counts.get(o.status.value, 0) + 1

    def ratio(w):
        vals = []
        for r in results:
            d = r.outcomes[w].data
            if d.get("noise_var_hat") is not None and d.get("noise_var"):
                vals.append(d["noise_var_hat"] / d["noise_var"])
        return _mean(vals)

    def snr_error(w):
        vals = []
        for r in results:
            d = r.outcomes[w].data
            if d.get("gamma_hat") and d.get("gamma") and np.isfinite(d["gamma"]) and np.isfinite(d["gamma_hat"]):
                vals.append(abs(10.0 * np.log10(d["gamma_hat"]) - 10.0 * np.log10(d["gamma"])))
        return _mean(vals)

    def deg(values):
        v = rmse(values)
        return None if v is None else float(np.degrees(v))

    all_outcomes = [o for r in results for o in r.outcomes]
    runtime = RuntimeStats(
        total_seconds=float(sum(r.seconds for r in results)),
        mean_window_seconds=_mean([o.data.get("seconds") for o in all_outcomes]) or 0.0,
        detector_iterations=_mean([o.data.get("detector_iterations") for o in all_outcomes]),
        refiner_iterations=_mean([o.data.get("refiner_iterations") for o in all_outcomes]),
        localizer_iterations=_mean([o.data.get("localizer_iterations") for o in all_outcomes]),
    )
    trials = max(len(results), 1)
    return MetricsReport(
        trials=len(results),
        windows=list(range(1, windows + 1)),
        detected_aoa_counts=[
            float(np.mean([len(r.aoas[w]) for r in results])) if results else 0.0 for w in range(windows)
        ],
        rough_aoa_counts=[_mean([r.outcomes[w].data.get("n_rough") for r in results]) or 0.0 for w in range(windows)],
        elevation_rmse_deg=[deg(v) for v in d_theta],
        azimuth_rmse_deg=[deg(v) for v in d_phi],
        localization_rmse_m=[rmse(v) for v in loc_errors],
        noise_var_ratio=[ratio(w) for w in range(windows)],
        inst_snr_error_db=[snr_error(w) for w in range(windows)],
        matched=matched,
        missed=missed,
        spurious=spurious,
        source_reliability=(reliability / trials).tolist(),
        reliable_tracks=[int(c) for c in reliable_counts],
        status_counts=status_counts,
        runtime=runtime,
    )


def run_pipeline(cfg: RunConfig, run_logger: Optional[RunLogger] = None) -> MetricsReport:
    """Simulate every trial and reduce to a MetricsReport."""
    return summarize(cfg, simulate(cfg, run_logger))


# ============================================================
# Heat map
# ============================================================

@dataclass(frozen=True)
class HeatmapResult:
    xs: np.ndarray
    ys: np.ndarray
    rmse: np.ndarray  # (len(ys), len(xs)), nan where no track matched
    e_max: np.ndarray


def heatmap_cell_config(cfg: RunConfig, x: float, y: float) -> RunConfig:
    hm = cfg.heatmap
    return cfg.model_copy(update={
        "sources": cfg.sources.model_copy(update={"placement": "table", "positions": [[float(x), float(y)]]}),
        "trajectory": cfg.trajectory.model_copy(update={"window_count": hm.window_count}),
        "noise": cfg.noise.model_copy(update={"snr_star_db": hm.snr_star_db}),
        "monte_carlo": cfg.monte_carlo.model_copy(update={"trials": hm.trials, "workers": 1}),
    })


def _cell_job(args: tuple[RunConfig, float, float, EpsilonModel]) -> tuple[float, float]:
    cfg, x, y, model = args
    cell_cfg = heatmap_cell_config(cfg, x, y)
    city = build_city(cell_cfg)
    errors = []
    last_position = None
    for trial in range(cell_cfg.monte_carlo.trials):
        res = run_trial(cell_cfg, trial, city, model)
        final = _reliable_positions(res.tracks[-1], cell_cfg.metrics.reliability_threshold)
        errors.extend(match_positions(final, res.source_positions, cell_cfg.metrics.position_radius).errors)
        last_position = res.source_positions[0]

    scene_traj = build_scene(cell_cfg, 0, city).trajectory
    r_end = array_position_at(scene_traj, window_midpoint(scene_traj, scene_traj.window_count))
    offset = last_position - r_end
    theta = float(np.arctan2(np.hypot(offset[0], offset[1]), abs(offset[2])))
    bound = worst_case_rmse(min(theta, np.pi / 2), 0.0, city.relief).e_max
    value = rmse(errors)
    return (np.nan if value is None else value), bound


def heatmap_sweep(cfg: RunConfig, step: Optional[float] = None) -> HeatmapResult:
    """Single-source final-window RMSE over a grid of source positions."""
    hm = cfg.heatmap
    step = step or hm.step
    xs = np.arange(hm.x_range[0], hm.x_range[1] + step / 2.0, step)
    ys = np.arange(hm.y_range[0], hm.y_range[1] + step / 2.0, step)
    model = epsilon_model_for(cfg)
    jobs = [(cfg, float(x), float(y), model) for y in ys for x in xs]
    logger.info("Heat map: %d cells, %d trial(s) each", len(jobs), hm.trials)

    if cfg.monte_carlo.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.monte_carlo.workers) as pool:
            values = list(pool.map(_cell_job, jobs))
    else:
        values = [_cell_job(job) for job in jobs]

    grid = np.array(values).reshape(ys.size, xs.size, 2)
    return HeatmapResult(xs, ys, grid[..., 0], grid[..., 1])


# ============================================================
# Synthesis only
# ============================================================

def synthesize_captures(cfg: RunConfig, trial: int = 0) -> tuple[Scene, list[WindowCapture]]:
    """Every window of one trial, with clean and noise components kept."""
    scene = build_scene(cfg, trial)
    noise, trains = trial_noise(cfg, scene, trial)
    captures = [
        synthesize_window(scene, noise, i, pulse_trains=trains, keep_components=True)
        for i in range(1, scene.trajectory.window_count + 1)
    ]
    return scene, captures
