import numpy as np
import pytest

from sparseloc.errors import ConfigurationError, WindowIndexError
from sparseloc.scene import (
    SPEED_OF_LIGHT,
    CityMap,
    SourceSet,
    Trajectory,
    array_position_at,
    build_city_map,
    height_at,
    place_sources,
    sample_rooftop_sources,
    sources_around,
    uniform_circular_array,
    window_midpoint,
    window_start,
)


def _trajectory(count=3):
    return Trajectory(np.array([27.0, 11.0, 500.0]), np.array([44.0, 33.0, 0.0]), 0.1, 0.03, count)


# ============================================================
# City map
# ============================================================

def test_flat_map_has_no_relief():
    city = CityMap.flat(400.0, cell_size=10.0)
    assert city.grid.shape == (40, 40)
    assert city.extent == (400.0, 400.0)
    assert city.relief == 0.0
    assert city.is_flat
    np.testing.assert_allclose(city.origin, [-200.0, -200.0])


def test_city_map_is_deterministic_and_bounded():
    a = build_city_map(seed=1, extent=200.0)
    b = build_city_map(seed=1, extent=200.0)
    c = build_city_map(seed=2, extent=200.0)
    np.testing.assert_array_equal(a.grid, b.grid)
    assert not np.array_equal(a.grid, c.grid)

    delta = 0.05 * (20.0 - 3.5)
    assert a.grid.shape == (200, 200)
    assert a.grid.min() >= 3.5 - delta - 1e-12
    assert a.grid.max() <= 20.0 + delta + 1e-12
    assert np.unique(a.grid).size > 2


def test_city_map_grid_is_read_only():
    city = build_city_map(seed=0, extent=50.0)
    with pytest.raises(ValueError):
        city.grid[0, 0] = 99.0


@pytest.mark.parametrize("kwargs", [
    {"extent": 0.0},
    {"extent": 100.0, "height_range": (5.0, 2.0)},
    {"extent": 100.0, "cell_size": 200.0},
])
def test_city_map_rejects_bad_arguments(kwargs):
    with pytest.raises(ConfigurationError):
        build_city_map(seed=0, **kwargs)


def test_city_map_rejects_negative_heights():
    with pytest.raises(ConfigurationError):
        CityMap(grid=np.array([[-1.0]]), origin=np.zeros(2), cell_size=1.0)


def test_height_lookup_and_clamping():
    city = CityMap(grid=np.array([[1.0, 2.0], [3.0, 4.0]]), origin=np.array([0.0, 0.0]), cell_size=10.0)
    assert height_at(city, (5.0, 5.0)) == 1.0
    assert height_at(city, (15.0, 5.0)) == 2.0
    assert height_at(city, (5.0, 15.0)) == 3.0
    assert height_at(city, (100.0, 100.0)) == 4.0
    assert height_at(city, (-50.0, -50.0)) == 1.0
    np.testing.assert_array_equal(height_at(city, np.array([[5.0, 5.0], [15.0, 15.0]])), [1.0, 4.0])


def test_flattened_keeps_footprint():
    city = build_city_map(seed=3, extent=100.0)
    flat = city.flattened()
    assert flat.grid.shape == city.grid.shape
    assert flat.relief == 0.0
    np.testing.assert_array_equal(flat.origin, city.origin)


# ============================================================
# Array and trajectory
# ============================================================

def test_uniform_circular_array_layout():
    geom = uniform_circular_array(6, 0.2, 0.5e9)
    D = geom.element_offsets
    assert D.shape == (3, 6)
    np.testing.assert_allclose(np.linalg.norm(D, axis=0), 0.2)
    np.testing.assert_allclose(D[2], 0.0)
    np.testing.assert_allclose(D[:, 0], [0.2, 0.0, 0.0])
    assert geom.wave_number == pytest.approx(2.0 * np.pi * 0.5e9 / SPEED_OF_LIGHT)


def test_rotation_keeps_radius():
    geom = uniform_circular_array(6, 0.2, 0.5e9)
    rotated = geom.rotated(np.pi / 6)
    np.testing.assert_allclose(np.linalg.norm(rotated.element_offsets, axis=0), 0.2)
    np.testing.assert_allclose(rotated.element_offsets[:, 0], [0.2 * np.cos(np.pi / 6), 0.2 * np.sin(np.pi / 6), 0.0])


def test_window_timing():
    traj = _trajectory()
    assert window_start(traj, 1) == pytest.approx(0.1)
    assert window_start(traj, 3) == pytest.approx(0.16)
    assert window_midpoint(traj, 2) == pytest.approx(0.145)
    assert traj.end_time == pytest.approx(0.19)


@pytest.mark.parametrize("index", [0, 4])
def test_window_index_out_of_range(index):
    with pytest.raises(WindowIndexError):
        window_start(_trajectory(), index)


def test_array_position_is_linear_in_time():
    traj = _trajectory()
    np.testing.assert_allclose(array_position_at(traj, 0.0), [27.0, 11.0, 500.0])
    np.testing.assert_allclose(array_position_at(traj, 1.0), [71.0, 44.0, 500.0])
    assert array_position_at(traj, np.array([0.0, 0.5, 1.0])).shape == (3, 3)


# ============================================================
# Sources
# ============================================================

def test_place_sources_snaps_to_map():
    city = CityMap(grid=np.full((10, 10), 7.5), origin=np.array([-50.0, -50.0]), cell_size=10.0)
    sources = place_sources(city, [[0.0, 10.0], [20.0, -30.0]])
    assert sources.count == 2
    np.testing.assert_allclose(sources.positions[:, 2], 7.5)
    np.testing.assert_allclose(sources.pulse_power, 3.0)


def test_rooftop_sources_land_on_buildings():
    city = build_city_map(seed=4, extent=100.0)
    sources = sample_rooftop_sources(city, 5, seed=1)
    assert sources.count == 5
    assert np.all(sources.positions[:, 2] > city.grid.min())


def test_sources_around_respects_ranges(rng):
    center = np.array([10.0, 20.0, 500.0])
    sources = sources_around(center, 50, rng, (500.0, 2000.0), (130.0, 180.0))
    offsets = sources.positions - center
    ranges = np.linalg.norm(offsets, axis=1)
    assert np.all((ranges >= 500.0) & (ranges <= 2000.0))
    theta = np.degrees(np.arccos(offsets[:, 2] / ranges))
    assert np.all((theta >= 130.0 - 1e-9) & (theta <= 180.0 + 1e-9))


def test_source_set_validation():
    with pytest.raises(ConfigurationError):
        SourceSet(np.zeros((1, 3)), 3e-6, 3.0, mean_inter_pulse=1e-6)
    with pytest.raises(ConfigurationError):
        SourceSet(np.zeros((1, 2)), 3e-6, 3.0, 3e-3)


def test_source_subset():
    sources = SourceSet(np.arange(9.0).reshape(3, 3), 3e-6, 3.0, 3e-3)
    sub = sources.subset([2, 0])
    np.testing.assert_array_equal(sub.positions, [[6.0, 7.0, 8.0], [0.0, 1.0, 2.0]])
