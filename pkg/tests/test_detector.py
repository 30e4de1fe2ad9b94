import numpy as np
import pytest

from sparseloc.config import DetectorConfig
from sparseloc.detector import (
    detect,
    run_length_filter,
    snr_star,
    threshold_from_p0,
    true_inst_snr,
)
from sparseloc.errors import ArgumentError
from sparseloc.scene import SourceSet


def _noise(rng, shape, variance=1.0):
    return np.sqrt(variance / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# ============================================================
# Threshold and continuity filter
# ============================================================

@pytest.mark.parametrize("p0", [1e-1, 1e-3, 1e-6])
def test_threshold_hits_false_alarm_probability(p0):
    v = threshold_from_p0(p0, 2.0)
    assert np.exp(-v**2 / 2.0) == pytest.approx(p0)


def test_threshold_grows_as_p0_shrinks():
    assert threshold_from_p0(1e-6, 1.0) > threshold_from_p0(1e-3, 1.0)


@pytest.mark.parametrize("p0", [0.0, 1.0, -0.5])
def test_threshold_rejects_bad_p0(p0):
    with pytest.raises(ArgumentError):
        threshold_from_p0(p0, 1.0)


def test_run_length_filter():
    indices = [0, 1, 2, 3, 4, 50, 100, 101]
    np.testing.assert_array_equal(run_length_filter(indices, 1, 5), [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(run_length_filter(indices, 1, 2), [0, 1, 2, 3, 4, 100, 101])
    assert run_length_filter([7], 20, 5).size == 0


# ============================================================
# Detector
# ============================================================

def test_noise_only_block_keeps_almost_nothing(rng):
    result = detect(_noise(rng, (6, 20000)))
    assert result.kept_count < 50
    assert result.noise_var == pytest.approx(1.0, rel=0.05)
    assert result.converged


def test_bursts_are_kept(rng):
    G = 5000
    block = _noise(rng, (6, G))
    bursts = np.r_[1000:1040, 3000:3040]
    phases = np.exp(2j * np.pi * rng.random((6, bursts.size)))
    block[:, bursts] += 10.0 * phases

    result = detect(block)
    assert set(bursts.tolist()) <= set(result.kept_indices.tolist())
    assert result.kept_count <= bursts.size + 10
    assert result.noise_var == pytest.approx(1.0, rel=0.05)
    assert result.inst_snr == pytest.approx(100.0, rel=0.15)
    assert result.filtered.shape == (6, result.kept_count)


def test_detect_is_idempotent_on_its_output(rng):
    G = 5000
    block = _noise(rng, (6, G))
    bursts = np.r_[800:860, 2500:2560, 4100:4140]
    block[:, bursts] += 6.0 * np.exp(2j * np.pi * rng.random((6, bursts.size)))

    first = detect(block)
    assert first.converged
    second = detect(first.filtered, noise_var=first.noise_var)

    np.testing.assert_array_equal(second.kept_indices, np.arange(first.kept_count))
    np.testing.assert_array_equal(second.filtered, first.filtered)
    assert second.noise_var == first.noise_var
    assert second.inst_snr == pytest.approx(first.inst_snr)
    assert second.noise_carried_forward


def test_all_zero_block():
    result = detect(np.zeros((6, 300), dtype=complex))
    assert result.is_empty
    assert result.noise_var == 0.0
    assert result.inst_snr == 0.0
    assert result.inst_snr_raw == -1.0


def test_noise_free_pulses_give_infinite_snr():
    block = np.zeros((6, 2000), dtype=complex)
    bursts = np.r_[100:130, 700:730, 1500:1530]
    block[:, bursts] = 1.0
    result = detect(block)
    np.testing.assert_array_equal(result.kept_indices, bursts)
    assert result.noise_var == 0.0
    assert np.isinf(result.inst_snr)
    assert result.signal_power == pytest.approx(1.0)


def test_noise_is_carried_forward_when_everything_is_kept():
    result = detect(np.ones((6, 50), dtype=complex), noise_var=1e-6)
    assert result.noise_carried_forward
    assert result.kept_count == 50
    assert result.noise_var == pytest.approx(1e-6)


def test_detector_respects_config(rng):
    block = _noise(rng, (6, 2000))
    block[:, 500:503] += 10.0
    assert 500 not in detect(block, DetectorConfig(l_adj=5, diff_max=1)).kept_indices
    assert 500 in detect(block, DetectorConfig(l_adj=2, diff_max=1)).kept_indices


def test_detect_rejects_empty_block():
    with pytest.raises(ArgumentError):
        detect(np.zeros((6, 0), dtype=complex))


# ============================================================
# SNR bookkeeping
# ============================================================

def test_snr_star():
    sources = SourceSet(np.array([[0.0, 0.0, 0.0]]), 3e-6, 3.0, 3e-3)
    r0 = np.array([0.0, 0.0, 100.0])
    assert snr_star(sources, r0, 2.0) == pytest.approx(3.0 / (4.0 * np.pi * 1e4) / 2.0)
    assert np.isinf(snr_star(sources, r0, 0.0))


def test_true_inst_snr():
    clean = np.ones((2, 4), dtype=complex)
    noise = np.full((2, 4), 0.5, dtype=complex)
    assert true_inst_snr(clean, noise, [0, 1]) == pytest.approx(4.0)
    assert np.isnan(true_inst_snr(clean, noise, []))
