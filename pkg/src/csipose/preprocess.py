"""Complex CSI windows to real model-input tensors.

A window of T complex frames H_t in C^{A x S} becomes one real tensor of shape
(A, S, T). Each frame is phase-calibrated per antenna: unwrap the phase along
the subcarrier axis, least-squares fit a linear ramp (slope + intercept), and
subtract it. This removes the per-frame timing offset (linear phase slope
across subcarriers) and the constant phase offset. The stored value is the
amplitude of the detrended frame, which equals the plain modulus because the
modulus is invariant to phase rotation; the fitted calibration parameters and
the detrended phase are available as side-channel metadata for callers that
want them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CsiPoseError


@dataclass(frozen=True)
class RawCsiFrame:
    """One CSI snapshot: complex (A, S) matrix plus a sample index."""

    values: np.ndarray
    timestamp: int


@dataclass(frozen=True)
class PhaseCalibration:
    """Fitted per-frame, per-antenna linear phase parameters."""

    slopes: np.ndarray       # (A, T)
    intercepts: np.ndarray   # (A, T)
    phase: np.ndarray        # (A, S, T) detrended unwrapped phase


def calibrate_phase(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Detrend the unwrapped phase of one complex frame along subcarriers.

    Returns (detrended_phase, slope, intercept) with shapes
    ((A, S), (A,), (A,)).
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise CsiPoseError(f"expected a (A, S) frame, got shape {values.shape}")
    a, s = values.shape
    phase = np.unwrap(np.angle(values), axis=1)
    idx = np.arange(s, dtype=np.float64)
    idx_c = idx - idx.mean()
    denom = (idx_c ** 2).sum()
    if denom > 0:
        slope = (phase * idx_c[None, :]).sum(axis=1) / denom
    else:
        slope = np.zeros(a)
    intercept = phase.mean(axis=1) - slope * idx.mean()
    detrended = phase - (slope[:, None] * idx[None, :] + intercept[:, None])
    return detrended, slope, intercept


def preprocess_window(frames: Sequence[RawCsiFrame], *,
                      return_calibration: bool = False):
    """Convert T raw frames into the real (A, S, T) amplitude tensor.

    All frames must share one (A, S) shape, contain only finite values, and
    carry strictly increasing timestamps. With `return_calibration=True` the
    fitted phase parameters are returned alongside the tensor.
    """
    if len(frames) == 0:
        raise CsiPoseError("empty frame window")
    shape = np.asarray(frames[0].values).shape
    a, s = shape
    t = len(frames)
    out = np.empty((a, s, t), dtype=np.float64)
    slopes = np.empty((a, t))
    intercepts = np.empty((a, t))
    phases = np.empty((a, s, t))
    last_ts = None
    for k, frame in enumerate(frames):
        vals = np.asarray(frame.values)
        if vals.shape != shape:
            raise CsiPoseError(
                f"frame {k} has shape {vals.shape}, expected {shape}")
        if not np.all(np.isfinite(vals.real)) or not np.all(np.isfinite(vals.imag)):
            raise CsiPoseError(f"frame {k} contains non-finite values")
        if last_ts is not None and frame.timestamp <= last_ts:
            raise CsiPoseError(
                f"frame {k} timestamp {frame.timestamp} not increasing")
        last_ts = frame.timestamp
        # The amplitude is unaffected by the phase detrend, so take the exact
        # modulus of the original values; the calibration is kept as metadata.
        out[:, :, k] = np.abs(vals)
        detrended, slope, intercept = calibrate_phase(vals)
        phases[:, :, k] = detrended
        slopes[:, k] = slope
        intercepts[:, k] = intercept
    if return_calibration:
        return out, PhaseCalibration(slopes=slopes, intercepts=intercepts, phase=phases)
    return out


def normalize_sample(z: np.ndarray) -> np.ndarray:
    """Per-sample z-score over all entries; near-zero variance maps to zeros."""
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise CsiPoseError("non-finite values in sample")
    mean = z.mean()
    std = z.std()
    if std < 1e-8:
        return np.zeros_like(z)
    return (z - mean) / std
