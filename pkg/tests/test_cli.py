import csv
import json

import pytest

from conftest import small_config
from sparseloc.cli import EXIT_CONFIG, EXIT_OK, main


@pytest.fixture
def config_file(tmp_path):
    return str(small_config(tmp_path).to_yaml(tmp_path / "cfg.yaml"))


def test_schema(capsys):
    assert main(["schema"]) == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert "detector" in schema["properties"]


def test_missing_config_is_a_config_error(tmp_path):
    assert main(["--config", str(tmp_path / "nope.yaml"), "run"]) == EXIT_CONFIG


def test_bad_override_is_a_config_error(config_file):
    assert main(["--config", config_file, "--set", "detector.l_adj=1", "run"]) == EXIT_CONFIG
    assert main(["--config", config_file, "--set", "nosuch.key=1", "run"]) == EXIT_CONFIG


def test_analyze_bound(config_file, tmp_path):
    out = tmp_path / "bound"
    assert main(["--config", config_file, "--out", str(out), "analyze-bound", "--dz-max", "10"]) == EXIT_OK
    with open(out / "bound.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 8 * 7
    assert float(rows[0]["theta_deg"]) == pytest.approx(10.0)
    assert (out / "config.yaml").exists()


def test_analyze_bound_defaults_to_map_relief(config_file, tmp_path):
    out = tmp_path / "bound"
    assert main(["--config", config_file, "--out", str(out), "analyze-bound"]) == EXIT_OK
    with open(out / "bound.csv", newline="") as f:
        assert all(float(r["e_max"]) == 0.0 for r in csv.DictReader(f))


def test_synth_with_diagnostics(config_file, tmp_path):
    out = tmp_path / "synth"
    assert main(["--config", config_file, "--out", str(out), "synth", "--diagnostics"]) == EXIT_OK
    assert (out / "map.csv").exists()
    for i in range(1, 5):
        assert (out / f"window_{i}.bin").exists()
        assert (out / f"detection_{i}.csv").exists()
    assert any(out.glob("spectrum_*.csv"))


def test_run(config_file, tmp_path):
    out = tmp_path / "run"
    assert main(["--config", config_file, "--set", "monte_carlo.seed=5", "--out", str(out), "run"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["trials"] == 1
    assert len(summary["windows"]) == 4
    assert any((tmp_path / "logs").glob("sparseloc_*.log"))
