import numpy as np
import pytest

from csipose.errors import CsiPoseError
from csipose.preprocess import (RawCsiFrame, calibrate_phase, normalize_sample,
                                preprocess_window)


def frames_from(values_list):
    return [RawCsiFrame(values=v, timestamp=k) for k, v in enumerate(values_list)]


def test_constant_unit_frames():
    frames = frames_from([np.ones((3, 8), dtype=complex)] * 5)
    z = preprocess_window(frames)
    assert z.shape == (3, 8, 5)
    np.testing.assert_array_equal(z, 1.0)


def test_linear_phase_ramp_leaves_unit_magnitude():
    s = np.arange(16)
    ramp = np.exp(1j * 0.1 * s)[None, :].repeat(2, axis=0)
    z = preprocess_window(frames_from([ramp] * 4))
    np.testing.assert_allclose(z, 1.0, atol=1e-12)


def test_magnitude_matches_modulus_oracle(rng):
    values = [rng.normal(size=(3, 10)) + 1j * rng.normal(size=(3, 10))
              for _ in range(6)]
    z = preprocess_window(frames_from(values))
    for t, v in enumerate(values):
        np.testing.assert_allclose(z[:, :, t], np.abs(v), atol=1e-12)


def test_output_nonnegative(rng):
    values = [rng.normal(size=(2, 12)) + 1j * rng.normal(size=(2, 12))
              for _ in range(3)]
    assert preprocess_window(frames_from(values)).min() >= 0.0


def test_calibration_recovers_linear_phase(rng):
    s = np.arange(24, dtype=float)
    slope, intercept = 0.05, 0.7
    mag = rng.uniform(0.5, 2.0, size=(1, 24))
    vals = mag * np.exp(1j * (slope * s + intercept))
    detrended, got_slope, got_intercept = calibrate_phase(vals)
    assert got_slope[0] == pytest.approx(slope, abs=1e-9)
    assert got_intercept[0] == pytest.approx(intercept, abs=1e-9)
    np.testing.assert_allclose(detrended, 0.0, atol=1e-9)


def test_calibration_metadata_shapes(rng):
    values = [rng.normal(size=(3, 10)) + 1j * rng.normal(size=(3, 10))
              for _ in range(4)]
    z, cal = preprocess_window(frames_from(values), return_calibration=True)
    assert cal.slopes.shape == (3, 4)
    assert cal.intercepts.shape == (3, 4)
    assert cal.phase.shape == z.shape


def test_shape_mismatch_rejected():
    frames = [RawCsiFrame(np.ones((2, 8), dtype=complex), 0),
              RawCsiFrame(np.ones((2, 9), dtype=complex), 1)]
    with pytest.raises(CsiPoseError, match="shape"):
        preprocess_window(frames)


def test_nonfinite_rejected():
    bad = np.ones((2, 8), dtype=complex)
    bad[0, 0] = np.nan
    with pytest.raises(CsiPoseError, match="non-finite"):
        preprocess_window(frames_from([bad]))


def test_nonmonotonic_timestamps_rejected():
    frames = [RawCsiFrame(np.ones((2, 8), dtype=complex), 1),
              RawCsiFrame(np.ones((2, 8), dtype=complex), 1)]
    with pytest.raises(CsiPoseError, match="timestamp"):
        preprocess_window(frames)


def test_empty_window_rejected():
    with pytest.raises(CsiPoseError, match="empty"):
        preprocess_window([])


def test_normalize_constant_gives_zeros():
    np.testing.assert_array_equal(normalize_sample(np.full((3, 4, 5), 7.0)),
                                  np.zeros((3, 4, 5)))


def test_normalize_zscore(rng):
    z = rng.normal(3.0, 2.5, size=(3, 114, 10))
    out = normalize_sample(z)
    assert abs(out.mean()) < 1e-6
    assert abs(out.std() - 1.0) < 1e-4


def test_normalize_idempotent(rng):
    z = rng.normal(size=(3, 20, 10)) * 5 + 2
    once = normalize_sample(z)
    np.testing.assert_allclose(normalize_sample(once), once, atol=1e-6)


def test_normalize_rejects_nonfinite():
    z = np.ones((2, 3, 4))
    z[0, 0, 0] = np.inf
    with pytest.raises(CsiPoseError):
        normalize_sample(z)
