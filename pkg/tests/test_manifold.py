import numpy as np
import pytest

from sparseloc.errors import ArgumentError, NothingToRefineError
from sparseloc.manifold import (
    DirectionBank,
    ManifoldEstimate,
    directions_to_estimates,
    gate_new_directions,
    initial_manifold,
)
from sparseloc.schema import ColumnTag, TagKind
from sparseloc.synthesis import steering_matrix, unit_direction

XI = np.cos(np.radians(10.0))


def _bank(*angles_deg):
    dirs = np.column_stack([unit_direction(np.radians(t), np.radians(p)) for t, p in angles_deg])
    tags = [ColumnTag(kind=TagKind.TRACKED, ident=k) for k in range(len(angles_deg))]
    return DirectionBank(dirs, tags)


def test_directions_to_estimates():
    r_i = np.array([0.0, 0.0, 100.0])
    positions = np.array([[100.0, 0.0, 100.0], [0.0, 0.0, 100.0], [0.0, 0.0, 0.0]])
    dirs, used = directions_to_estimates(positions, r_i)
    np.testing.assert_array_equal(used, [0, 2])
    np.testing.assert_allclose(dirs, [[1.0, 0.0], [0.0, 0.0], [0.0, -1.0]])


def test_gate_passes_everything_for_empty_bank():
    new = np.column_stack([unit_direction(2.0, 1.0), unit_direction(2.5, 3.0)])
    np.testing.assert_array_equal(gate_new_directions(new, DirectionBank(), XI), [0, 1])


def test_gate_drops_directions_near_known_sources():
    bank = _bank((150.0, 40.0))
    new = np.column_stack([
        unit_direction(np.radians(152.0), np.radians(45.0)),
        unit_direction(np.radians(120.0), np.radians(200.0)),
    ])
    np.testing.assert_array_equal(gate_new_directions(new, bank, XI), [1])


def test_gate_uses_absolute_dot_product():
    bank = _bank((150.0, 40.0))
    opposite = -bank.directions
    assert gate_new_directions(opposite, bank, XI).size == 0


@pytest.mark.parametrize("xi", [0.0, 1.0, 1.5])
def test_gate_rejects_bad_xi(xi):
    with pytest.raises(ArgumentError):
        gate_new_directions(np.zeros((3, 0)), DirectionBank(), xi)


def test_initial_manifold_tags_and_columns(geom):
    bank = _bank((150.0, 40.0), (130.0, 300.0))
    new = unit_direction(np.radians(100.0), np.radians(10.0))[:, None]
    A0 = initial_manifold(bank, new, geom)
    assert A0.size == 3
    assert [str(t) for t in A0.tags] == ["tracked:0", "tracked:1", "new:0"]
    np.testing.assert_allclose(A0.columns, steering_matrix(geom, np.hstack([bank.directions, new])))


def test_initial_manifold_needs_columns(geom):
    with pytest.raises(NothingToRefineError):
        initial_manifold(DirectionBank(), np.zeros((3, 0)), geom)


def test_bank_validation():
    with pytest.raises(ArgumentError):
        DirectionBank(np.array([[2.0], [0.0], [0.0]]), [ColumnTag.new(0)])
    with pytest.raises(ArgumentError):
        DirectionBank(np.array([[1.0], [0.0], [0.0]]), [])


def test_manifold_estimate_is_empty():
    assert ManifoldEstimate(np.zeros((6, 0)), ()).is_empty
