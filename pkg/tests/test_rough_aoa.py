import numpy as np
import pytest

from sparseloc.errors import ArgumentError, NoDetectionsError
from sparseloc.rough_aoa import (
    AngleGrid,
    MusicSpectrum,
    mdl_order,
    music_spectrum,
    pick_peaks,
    rough_directions,
    sample_covariance,
)
from sparseloc.synthesis import steering_vector


def _bumps(grid, centers_deg, heights, width_deg=20.0):
    theta, phi = np.meshgrid(np.degrees(grid.elevations), np.degrees(grid.azimuths), indexing="ij")
    values = np.zeros(grid.shape)
    for (t0, p0), h in zip(centers_deg, heights):
        dphi = (phi - p0 + 180.0) % 360.0 - 180.0
        values += h * np.exp(-((theta - t0) ** 2 + dphi**2) / (2.0 * width_deg**2))
    return values


# ============================================================
# Grid
# ============================================================

def test_uniform_grid_shape():
    assert AngleGrid.uniform(1.0).shape == (181, 360)
    grid = AngleGrid.uniform(1.0, (90.0, 180.0))
    assert grid.shape == (91, 360)
    assert grid.elevations[0] == pytest.approx(np.pi / 2)
    assert grid.directions().shape == (3, 91 * 360)


def test_grid_rejects_unsorted_axes():
    with pytest.raises(ArgumentError):
        AngleGrid(np.array([0.5, 0.1]), np.array([0.0, 1.0]))


# ============================================================
# Covariance and order
# ============================================================

def test_sample_covariance_is_hermitian(rng):
    Y = rng.standard_normal((6, 40)) + 1j * rng.standard_normal((6, 40))
    R = sample_covariance(Y)
    np.testing.assert_allclose(R, R.conj().T)
    np.testing.assert_allclose(R, Y @ Y.conj().T / 40)


def test_sample_covariance_without_columns():
    with pytest.raises(NoDetectionsError):
        sample_covariance(np.zeros((6, 0), dtype=complex))


@pytest.mark.parametrize("eigenvalues, expected", [
    ([10.0, 5.0, 1.0, 1.0, 1.0, 1.0], 2),
    ([1.0] * 6, 0),
])
def test_mdl_order(eigenvalues, expected):
    assert mdl_order(eigenvalues, 1000) == expected


def test_mdl_order_of_noise_free_rank_one(geom):
    a = steering_vector(geom, np.radians(150.0), np.radians(30.0))
    R = np.outer(a, a.conj())
    assert mdl_order(np.linalg.eigvalsh(R), 500, rel_floor=1e-12) == 1


# ============================================================
# MUSIC
# ============================================================

def test_music_peaks_at_source(geom):
    grid = AngleGrid.uniform(2.0, (90.0, 180.0))
    a = steering_vector(geom, np.radians(140.0), np.radians(60.0))
    R = np.outer(a, a.conj()) + 1e-3 * np.eye(6)
    spectrum = music_spectrum(R, 1, geom, grid)
    assert spectrum.values.shape == grid.shape
    theta, phi = grid.angles(np.argmax(spectrum.values))
    assert np.degrees(theta) == pytest.approx(140.0)
    assert np.degrees(phi) == pytest.approx(60.0)


@pytest.mark.parametrize("scale", [1e-3, 7.5, 1e4])
def test_music_spectrum_ignores_covariance_scale(geom, rng, scale):
    grid = AngleGrid.uniform(2.0, (90.0, 180.0))
    A = np.column_stack([
        steering_vector(geom, np.radians(140.0), np.radians(60.0)),
        steering_vector(geom, np.radians(115.0), np.radians(250.0)),
    ])
    S = rng.standard_normal((2, 400)) + 1j * rng.standard_normal((2, 400))
    V = 0.1 * (rng.standard_normal((6, 400)) + 1j * rng.standard_normal((6, 400)))
    R = sample_covariance(A @ S + V)

    base = music_spectrum(R, 2, geom, grid)
    scaled = music_spectrum(scale * R, 2, geom, grid)
    # the noise-subspace projector does not see the eigenvalue scale
    np.testing.assert_allclose(scaled.values, base.values, rtol=1e-6)
    assert pick_peaks(scaled, 2).angles == pick_peaks(base, 2).angles


@pytest.mark.parametrize("order", [-1, 6])
def test_music_rejects_bad_order(geom, order):
    with pytest.raises(ArgumentError):
        music_spectrum(np.eye(6), order, geom, AngleGrid.uniform(10.0))


# ============================================================
# Peaks
# ============================================================

def test_pick_peaks_orders_by_height():
    grid = AngleGrid.uniform(10.0)
    values = _bumps(grid, [(120.0, 180.0), (60.0, 90.0)], [3.0, 5.0])
    pick = pick_peaks(MusicSpectrum(values, grid), 2)
    assert not pick.shortfall
    np.testing.assert_allclose(np.degrees(pick.angles), [[60.0, 90.0], [120.0, 180.0]])


def test_pick_peaks_wraps_azimuth():
    grid = AngleGrid.uniform(10.0)
    values = _bumps(grid, [(60.0, 357.0), (120.0, 180.0)], [5.0, 3.0])
    pick = pick_peaks(MusicSpectrum(values, grid), 3)
    assert pick.shortfall
    assert len(pick.angles) == 2
    np.testing.assert_allclose(np.degrees(pick.angles[0]), [60.0, 0.0])


def test_pole_row_is_a_single_direction():
    grid = AngleGrid.uniform(10.0)
    values = np.zeros(grid.shape)
    values[-1, :] = 5.0
    values[-2, :] = 1.0
    pick = pick_peaks(MusicSpectrum(values, grid), 5)
    assert pick.angles == [(pytest.approx(np.pi), 0.0)]


def test_rough_directions_are_unit():
    grid = AngleGrid.uniform(10.0)
    values = _bumps(grid, [(120.0, 180.0), (60.0, 90.0)], [3.0, 5.0])
    dirs = rough_directions(pick_peaks(MusicSpectrum(values, grid), 2))
    assert dirs.shape == (3, 2)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=0), 1.0)
    assert rough_directions(pick_peaks(MusicSpectrum(np.zeros(grid.shape), grid), 1)).shape == (3, 0)
