"""
Shared fixtures for the sparseloc test suites.

Scenario checks that take minutes are marked ``slow`` and only run with
``pytest --runslow``.
"""

import numpy as np
import pytest

from sparseloc import calibration
from sparseloc.calibration import resolve_epsilon_model
from sparseloc.config import CalibrationConfig, RefinerConfig, RunConfig
from sparseloc.scene import CityMap, uniform_circular_array

# Small enough to fit in a few seconds; every run in the suite shares it.
QUICK_CALIBRATION = {
    "trials": 4,
    "n_values": [2, 3, 4],
    "columns": 100,
    "realizations": 2,
    "f_grid_log10": [-4.0, 1.0, 26],
    "min_surviving": 1,
}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow scenario tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running scenario test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def model_cache(tmp_path_factory):
    """Calibrated epsilon models go to a per-session directory instead of ~/.sparseloc."""
    path = tmp_path_factory.mktemp("epsilon_cache")
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(calibration, "DEFAULT_CACHE_DIR", path)
        yield path


@pytest.fixture(scope="session")
def epsilon_model(model_cache):
    return resolve_epsilon_model(
        uniform_circular_array(6, 0.2, 0.5e9), RefinerConfig(), CalibrationConfig(**QUICK_CALIBRATION)
    )


@pytest.fixture
def geom():
    """Six-element UCA at 0.5 GHz, radius 0.2 m."""
    return uniform_circular_array(6, 0.2, 0.5e9)


@pytest.fixture
def flat_city():
    return CityMap.flat(400.0, cell_size=10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(tmp_path=None, **sections) -> RunConfig:
    """
    Flat 400 m map, short windows and dense pulses so every window carries
    signal. Keyword arguments replace whole sections by dicts.
    """
    data = {
        "scene": {"flat": True, "extent": 400.0, "cell_size": 10.0},
        "trajectory": {"window_duration": 0.002, "window_count": 4},
        "sources": {
            "placement": "table",
            "positions": [[0.0, 50.0], [120.0, -90.0]],
            "mean_inter_pulse": 2.0e-4,
        },
        "noise": {"snr_star_db": 20.0},
        "monte_carlo": {"trials": 1, "seed": 3},
        "calibration": dict(QUICK_CALIBRATION),
        "output": {"plots": False},
    }
    if tmp_path is not None:
        data["output"] = {"plots": False, "directory": str(tmp_path / "runs"), "log_dir": str(tmp_path / "logs")}
    for name, section in sections.items():
        data[name] = {**data.get(name, {}), **section}
    return RunConfig.from_dict(data)


@pytest.fixture
def small_cfg(tmp_path):
    return small_config(tmp_path)


@pytest.fixture
def noise_free_cfg(tmp_path):
    return small_config(
        tmp_path,
        sources={"positions": [[0.0, 50.0]]},
        noise={"enabled": False},
    )
