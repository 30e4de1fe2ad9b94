import json

import numpy as np

from sparseloc.logger import RunLogger


def _entries(run_logger):
    return [json.loads(line) for line in run_logger.get_log_file_path().read_text().splitlines()]


def test_nothing_is_written_before_start(tmp_path):
    run_logger = RunLogger(log_dir=tmp_path)
    run_logger.log_window(0, 1, {"n_kept": 3})
    assert run_logger.get_log_file_path() is None
    assert list(tmp_path.iterdir()) == []


def test_run_trace(tmp_path):
    run_logger = RunLogger(run_name="test", log_dir=tmp_path)
    run_logger.start_run("run", 7, {"noise": {"snr_star_db": 20.0}})
    run_logger.log_window(0, 1, {"n_kept": np.int64(12), "noise_var_hat": np.float64(0.5), "pose": np.zeros(3)})
    run_logger.log_window_error(0, 2, "detection", "energy detector kept no columns")
    run_logger.log_trial_end(0, {"seconds": 1.5})
    run_logger.end_run("completed")

    entries = _entries(run_logger)
    assert [e["type"] for e in entries] == ["RUN_START", "WINDOW", "WINDOW_ERROR", "TRIAL_END", "RUN_END"]
    assert [e["index"] for e in entries] == [1, 2, 3, 4, 5]
    assert entries[0]["payload"]["seed"] == 7
    assert entries[1]["payload"]["n_kept"] == 12
    assert entries[1]["payload"]["pose"] == [0.0, 0.0, 0.0]
    assert entries[2]["payload"]["stage"] == "detection"
    assert entries[-1]["payload"]["status"] == "completed"
    assert run_logger.get_log_file_path().name.startswith("test_")


def test_failed_run_records_error(tmp_path):
    run_logger = RunLogger(log_dir=tmp_path)
    run_logger.start_run("heatmap", 0, {})
    run_logger.end_run("failed", "boom")
    last = _entries(run_logger)[-1]
    assert last["type"] == "RUN_END"
    assert last["payload"]["status"] == "failed"
    assert last["payload"]["error"] == "boom"
