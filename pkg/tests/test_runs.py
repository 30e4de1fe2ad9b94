import numpy as np

from sparseloc.utils import run_bounds, select_runs


def test_run_bounds():
    starts, ends = run_bounds(np.array([True, True, False, True, False, True]))
    np.testing.assert_array_equal(starts, [0, 3, 5])
    np.testing.assert_array_equal(ends, [2, 4, 6])


def test_select_runs_keeps_linked_elements():
    np.testing.assert_array_equal(select_runs(np.array([True, True, False, True]), 2), [0, 1, 2])
    np.testing.assert_array_equal(select_runs(np.array([True, True, False, True]), 1), [0, 1, 2, 3, 4])
    assert select_runs(np.array([False, False]), 1).size == 0


def test_select_runs_empty_mask():
    assert select_runs(np.zeros(0, dtype=bool), 3).size == 0
