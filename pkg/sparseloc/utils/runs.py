"""Run-length selection over binary adjacency vectors."""

from __future__ import annotations

import numpy as np


def run_bounds(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start (inclusive) and end (exclusive) positions of every run of True."""
    padded = np.concatenate(([0], np.asarray(mask, dtype=np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def select_runs(mask: np.ndarray, min_run: int) -> np.ndarray:
    """
    Positions to keep in a sequence of len(mask) + 1 elements.

    mask[k] describes the link between element k and k + 1. Every run of at
    least ``min_run`` consecutive True links keeps the elements it links,
    i.e. the run itself plus the element directly below it.
    """
    mask = np.asarray(mask, dtype=bool)
    n = mask.size
    if n == 0:
        return np.empty(0, dtype=np.int64)

    starts, ends = run_bounds(mask)
    long_enough = (ends - starts) >= max(min_run, 1)
    marks = np.zeros(n + 2, dtype=np.int64)
    np.add.at(marks, starts[long_enough], 1)
    np.add.at(marks, ends[long_enough] + 1, -1)
    keep = np.cumsum(marks)[: n + 1] > 0
    return np.flatnonzero(keep)
