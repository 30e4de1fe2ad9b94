import numpy as np
import pytest

from sparseloc.errors import ArgumentError, DomainError, WindowIndexError
from sparseloc.scene import Scene, Trajectory, array_position_at, place_sources, window_midpoint
from sparseloc.synthesis import (
    NoiseModel,
    angles_of,
    noise_variance_for_snr_star,
    path_gain,
    sample_pulse_train,
    sine_pulse,
    steering_matrix,
    steering_vector,
    synthesize_window,
    true_angles,
    unit_direction,
)


@pytest.fixture
def scene(geom, flat_city):
    trajectory = Trajectory(np.array([27.0, 11.0, 500.0]), np.array([44.0, 33.0, 0.0]), 0.1, 0.002, 3)
    sources = place_sources(flat_city, [[0.0, 50.0]], mean_inter_pulse=2e-4)
    return Scene(flat_city, geom, trajectory, sources, sample_rate=10e6)


# ============================================================
# Geometry
# ============================================================

@pytest.mark.parametrize("theta, phi, expected", [
    (0.0, 0.0, [0.0, 0.0, 1.0]),
    (np.pi / 2, np.pi / 2, [0.0, 1.0, 0.0]),
    (np.pi, 0.0, [0.0, 0.0, -1.0]),
])
def test_unit_direction(theta, phi, expected):
    np.testing.assert_allclose(unit_direction(theta, phi), expected, atol=1e-15)


@pytest.mark.parametrize("theta, phi", [(-0.1, 0.0), (np.pi + 0.1, 0.0), (0.5, -0.2), (0.5, 7.0)])
def test_unit_direction_rejects_out_of_range(theta, phi):
    with pytest.raises(ArgumentError):
        unit_direction(theta, phi)


def test_angles_of_inverts_unit_direction():
    theta, phi = angles_of(unit_direction(2.1, 5.5))
    assert theta == pytest.approx(2.1)
    assert phi == pytest.approx(5.5)


def test_steering_vector_has_unit_modulus(geom):
    a = steering_vector(geom, 2.5, 1.0)
    np.testing.assert_allclose(np.abs(a), 1.0)
    assert np.linalg.norm(a) == pytest.approx(np.sqrt(6))


def test_steering_vector_is_blind_to_vertical_mirror(geom):
    np.testing.assert_allclose(steering_vector(geom, 0.4, 1.0), steering_vector(geom, np.pi - 0.4, 1.0))


def test_path_gain():
    beta = path_gain(100.0)
    assert abs(beta) == pytest.approx(1.0 / (np.sqrt(4.0 * np.pi) * 100.0))
    with pytest.raises(DomainError):
        path_gain(0.0)


# ============================================================
# Pulses
# ============================================================

def test_sine_pulse_power_and_support():
    pulse = sine_pulse(3e-6, power=3.0)
    t = np.linspace(0.0, 3e-6, 10001, endpoint=False)
    values = pulse(t)
    assert values.max() == pytest.approx(np.sqrt(6.0), rel=1e-6)
    assert np.mean(values**2) == pytest.approx(3.0, rel=1e-3)
    assert pulse(np.array([-1e-7, 3e-6]))[0] == 0.0
    assert pulse(np.array([3e-6]))[0] == 0.0


def test_pulse_train_is_poisson_and_reproducible():
    train = sample_pulse_train(3e-3, 3.0, seed=42)
    again = sample_pulse_train(3e-3, 3.0, seed=42)
    np.testing.assert_array_equal(train.start_times, again.start_times)
    assert 850 <= len(train) <= 1150
    assert np.all(np.diff(train.start_times) > 0)
    assert train.start_times.min() >= 0.0 and train.start_times.max() < 3.0


def test_empty_span_gives_empty_train():
    assert len(sample_pulse_train(3e-3, 0.0, seed=1)) == 0


# ============================================================
# Windows
# ============================================================

def test_noise_free_window_is_rank_one(scene):
    capture = synthesize_window(scene, NoiseModel(0.0), 1, pulse_seed=5, keep_components=True)
    assert capture.shape == (6, 20000)
    np.testing.assert_array_equal(capture.samples, capture.clean)

    s = np.linalg.svd(capture.samples, compute_uv=False)
    assert s[0] > 0
    assert s[1] <= 1e-10 * s[0]

    # columns follow the steering vector toward the source at the window midpoint
    r_mid = array_position_at(scene.trajectory, window_midpoint(scene.trajectory, 1))
    theta, phi = true_angles(scene.sources, r_mid)
    a = steering_vector(scene.geometry, float(theta[0]), float(phi[0]))
    g = capture.signal_columns()[0]
    col = capture.samples[:, g]
    np.testing.assert_allclose(col / col[0], a / a[0], atol=1e-12)
    np.testing.assert_allclose(capture.array_pose.position, r_mid)


def test_noise_statistics(scene):
    capture = synthesize_window(scene, NoiseModel(2.0, seed=9), 2, keep_components=True)
    assert np.mean(np.abs(capture.noise) ** 2) == pytest.approx(2.0, rel=0.02)
    assert abs(np.mean(capture.noise)) < 0.02


def test_synthesis_is_deterministic(scene):
    a = synthesize_window(scene, NoiseModel(1e-8, seed=3), 1, pulse_seed=4)
    b = synthesize_window(scene, NoiseModel(1e-8, seed=3), 1, pulse_seed=4)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_noise_seed_leaves_signal_unchanged(scene):
    a = synthesize_window(scene, NoiseModel(1e-8, seed=3), 1, pulse_seed=4, keep_components=True)
    b = synthesize_window(scene, NoiseModel(1e-8, seed=8), 1, pulse_seed=4, keep_components=True)
    np.testing.assert_array_equal(a.clean, b.clean)
    assert not np.array_equal(a.noise, b.noise)


def test_window_index_is_checked(scene):
    with pytest.raises(WindowIndexError):
        synthesize_window(scene, NoiseModel(0.0), 4)


def test_multi_source_block_has_source_rank(geom):
    directions = np.column_stack([unit_direction(2.5, 0.3), unit_direction(2.2, 4.0)])
    A = steering_matrix(geom, directions)
    S = np.random.default_rng(0).standard_normal((2, 50))
    assert np.linalg.matrix_rank(A @ S) == 2


def test_noise_variance_for_snr_star(scene):
    r0 = scene.trajectory.initial_position
    R = np.linalg.norm(scene.sources.positions[0] - r0)
    received = 3.0 / (4.0 * np.pi * R**2)
    assert noise_variance_for_snr_star(scene.sources, r0, 20.0) == pytest.approx(received / 100.0)
    assert noise_variance_for_snr_star(scene.sources, r0, np.inf) == 0.0
