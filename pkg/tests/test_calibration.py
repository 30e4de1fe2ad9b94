import numpy as np
import pytest

from sparseloc import calibration
from sparseloc.calibration import (
    _iqr_keep,
    cached_model_path,
    calibrate_f,
    calibration_settings,
    check_monotonicity,
    geometry_fingerprint,
    random_attenuation,
    resolve_epsilon_model,
    sparse_source_matrix,
)
from sparseloc.config import CalibrationConfig, RefinerConfig
from sparseloc.errors import CalibrationError, ConfigurationError
from sparseloc.scene import uniform_circular_array
from sparseloc.sparse import EpsilonModel


def _tiny(**overrides):
    values = dict(
        trials=3, n_values=[2, 3], columns=40, realizations=1,
        f_grid_log10=(-4.0, 1.0, 11), min_surviving=1,
    )
    values.update(overrides)
    return CalibrationConfig(**values)


def test_sparse_source_matrix_statistics(rng):
    S = sparse_source_matrix(5, 20000, rng)
    sizes = np.count_nonzero(S, axis=0)
    assert sizes.max() <= 3
    assert np.mean(sizes == 0) == pytest.approx(0.1, abs=0.015)
    assert np.mean(sizes == 1) == pytest.approx(0.65, abs=0.015)
    assert sparse_source_matrix(2, 500, rng).shape == (2, 500)
    assert np.count_nonzero(sparse_source_matrix(2, 500, rng), axis=0).max() <= 2


def test_random_attenuation_range(rng):
    psi = random_attenuation(1000, rng)
    assert np.all((np.abs(psi) >= 0.5) & (np.abs(psi) <= 1.0))


def test_iqr_rule_drops_outliers():
    kept = _iqr_keep(np.array([-1.0, -1.1, -0.9, -1.05, 3.0]))
    assert 3.0 not in kept
    assert kept.size == 4


def test_calibrate_small_grid(geom):
    cfg = _tiny()
    model, report = calibrate_f(geom, cfg)

    assert model.n_values == [2, 3]
    assert all(c.size == 5 for c in model.coefficients.values())
    assert model.metadata["trials"] == 3
    assert model.metadata["gamma_db_max"] == 21.0
    assert model.is_calibrated
    assert model.metadata["geometry"] == geometry_fingerprint(geom)
    assert model.metadata["max_abs_residual"] == pytest.approx(report.max_abs_residual, abs=1e-6)

    assert len(report.cells) == 2 * len(cfg.gamma_grid_db())
    assert all(1 <= c.survivors <= 3 for c in report.cells)
    assert all(np.isfinite(c.residual) for c in report.cells)
    assert report.max_abs_residual == pytest.approx(max(abs(c.residual) for c in report.cells))
    assert isinstance(report.monotonicity.passed, bool)


def test_calibration_is_seeded(geom):
    cfg = _tiny(n_values=[2], trials=2)
    first, _ = calibrate_f(geom, cfg)
    second, _ = calibrate_f(geom, cfg)
    np.testing.assert_array_equal(first.coefficients[2], second.coefficients[2])


def test_monotone_model_passes():
    model = EpsilonModel({2: np.array([-1.0, -0.05]), 3: np.array([-0.9, -0.05]), 5: np.array([-0.7, -0.04])})
    report = check_monotonicity(model, range(2, 8), np.arange(2.0, 22.0))
    assert report.passed
    assert report.gamma_violations == report.n_violations == []


def test_monotonicity_violations_are_reported():
    model = EpsilonModel({2: np.array([-1.0, 0.01]), 3: np.array([-2.0])})
    report = check_monotonicity(model, [2, 3], [2.0, 5.0, 8.0])
    assert not report.non_increasing_in_gamma
    assert not report.non_decreasing_in_n
    assert (2, 5.0) in report.gamma_violations
    assert (3, 2.0) in report.n_violations


def test_calibration_error_names_the_cell():
    err = CalibrationError("no survivors", n=3, gamma_db=7.0)
    assert "N=3" in str(err)
    assert "7.0 dB" in str(err)


@pytest.mark.parametrize("l_max", [1, 2, 3])
def test_sweep_uses_configured_sparsity_cap(geom, monkeypatch, l_max):
    caps = []
    solve = calibration.solve_levels

    def recording(block, atoms, cap, *args, **kwargs):
        caps.append(cap)
        return solve(block, atoms, cap, *args, **kwargs)

    monkeypatch.setattr(calibration, "solve_levels", recording)
    model, _ = calibrate_f(geom, _tiny(n_values=[2, 3], trials=1, l_max=l_max))
    assert set(caps) == {min(l_max, 2), min(l_max, 3)}
    assert model.metadata["l_max"] == l_max


def test_refiner_cap_drives_calibration_settings():
    cfg = calibration_settings(RefinerConfig(l_max=2), _tiny(l_max=3))
    assert cfg.l_max == 2
    assert cfg.trials == 3


# ============================================================
# Model resolution
# ============================================================

def test_resolved_model_is_a_real_calibration(epsilon_model, geom):
    assert epsilon_model.is_calibrated
    assert epsilon_model.metadata["kind"] == "calibrated"
    assert epsilon_model.metadata["trials"] > 0
    assert epsilon_model.metadata["geometry"] == geometry_fingerprint(geom)


def test_resolution_calibrates_once_then_reuses_cache(geom, tmp_path, monkeypatch):
    refiner = RefinerConfig(model_cache_dir=str(tmp_path))
    first = resolve_epsilon_model(geom, refiner, _tiny(n_values=[2], trials=2))
    path = cached_model_path(geom, tmp_path)
    assert path.exists()

    def fail(*args, **kwargs):
        raise AssertionError("cache should have been used")

    monkeypatch.setattr(calibration, "calibrate_f", fail)
    second = resolve_epsilon_model(geom, refiner, _tiny(n_values=[2], trials=2))
    np.testing.assert_array_equal(second.coefficients[2], first.coefficients[2])
    assert second.metadata == first.metadata


def test_stale_cache_is_refitted(geom, tmp_path):
    refiner = RefinerConfig(model_cache_dir=str(tmp_path))
    resolve_epsilon_model(geom, refiner, _tiny(n_values=[2], trials=2))
    refitted = resolve_epsilon_model(geom, refiner, _tiny(n_values=[2], trials=3))
    assert refitted.metadata["trials"] == 3
    assert EpsilonModel.from_csv(cached_model_path(geom, tmp_path)).metadata["trials"] == 3


def test_seed_table_in_cache_is_replaced(geom, tmp_path):
    path = cached_model_path(geom, tmp_path)
    EpsilonModel({2: np.array([-0.35, -0.08])}, {"kind": "seed", "trials": 0}).to_csv(path)
    model = resolve_epsilon_model(geom, RefinerConfig(model_cache_dir=str(tmp_path)), _tiny(n_values=[2], trials=2))
    assert model.is_calibrated
    assert EpsilonModel.from_csv(path).is_calibrated


def test_explicit_model_file_wins(geom, tmp_path, monkeypatch):
    model = EpsilonModel({2: np.array([-1.5, -0.02])}, {"kind": "calibrated", "trials": 7})
    path = model.to_csv(tmp_path / "mine.csv")
    monkeypatch.setattr(calibration, "calibrate_f", None)
    loaded = resolve_epsilon_model(geom, RefinerConfig(epsilon_model=str(path)), _tiny())
    np.testing.assert_array_equal(loaded.coefficients[2], model.coefficients[2])

    seed = EpsilonModel({2: np.array([-0.35])}, {"kind": "seed", "trials": 0}).to_csv(tmp_path / "seed.csv")
    with pytest.raises(ConfigurationError):
        resolve_epsilon_model(geom, RefinerConfig(epsilon_model=str(seed)), _tiny())


def test_cache_is_keyed_by_array_layout(geom, tmp_path):
    other = uniform_circular_array(8, 0.2, 0.5e9)
    assert cached_model_path(geom, tmp_path) != cached_model_path(other, tmp_path)
    assert cached_model_path(geom, tmp_path) == cached_model_path(uniform_circular_array(6, 0.2, 0.5e9), tmp_path)
