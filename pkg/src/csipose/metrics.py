"""Pose evaluation metrics: MPJPE, Procrustes alignment, PA-MPJPE, PCK@k,
and per-joint error breakdowns.

Conventions, pinned here so a dataset-specific replacement is a one-line swap:
  * all distances are in millimeters;
  * PCK normalizes by the ground-truth torso length |neck base - bot torso|;
  * PCK is computed on the Procrustes-aligned prediction, a joint counts as
    correct when its error is <= the threshold (boundary included);
  * Procrustes alignment uses proper rotations only (no reflections) and a
    non-negative isotropic scale.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CsiPoseError
from .skeleton import JOINT_NAMES

BOT_TORSO = 0
NECK_BASE = 9
PCK_THRESHOLDS = (10, 20, 30, 40, 50)

TABLE1_COLUMNS = ("Method", "PCK@10", "PCK@20", "PCK@30", "PCK@40", "PCK@50",
                  "MPJPE", "PA-MPJPE")


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise CsiPoseError(f"pose shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-joint Euclidean distances, shape (J,)."""
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-joint position error in mm."""
    return float(joint_errors(pred, gt).mean())


def procrustes_align(pred: np.ndarray, gt: np.ndarray, *,
                     allow_reflection: bool = False) -> np.ndarray:
    """Optimal similarity alignment of `pred` onto `gt`.

    Returns s * (pred - pred_centroid) @ R^T + gt_centroid where the rotation
    R (det +1 unless allow_reflection), scale s >= 0 and translation jointly
    minimize the sum of squared joint distances to `gt` (Umeyama's closed
    form). `allow_reflection=True` exists only as an oracle for tests.
    """
    pred, gt = _check_pair(pred, gt)
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p0 = pred - mu_p
    g0 = gt - mu_g
    var_g = (g0 ** 2).sum() / len(gt)
    if var_g <= 0.0:
        raise CsiPoseError("degenerate ground truth: all joints coincide")
    var_p = (p0 ** 2).sum() / len(pred)
    if var_p <= 0.0:
        # All predicted joints coincide; the s -> 0 limit puts every aligned
        # joint at the ground-truth centroid.
        return np.tile(mu_g, (len(pred), 1))
    cov = g0.T @ p0 / len(pred)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if not allow_reflection and np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_p)
    scale = max(scale, 0.0)
    return scale * p0 @ rot.T + mu_g


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE after Procrustes alignment of the prediction."""
    return mpjpe(procrustes_align(pred, gt), gt)


def torso_length(gt: np.ndarray) -> float:
    gt = np.asarray(gt, dtype=np.float64)
    length = float(np.linalg.norm(gt[NECK_BASE] - gt[BOT_TORSO]))
    if length <= 0.0:
        raise CsiPoseError("zero torso length: neck base and bot torso coincide")
    return length


def pck_from_errors(errors: np.ndarray, torso: np.ndarray,
                    thresholds=PCK_THRESHOLDS) -> dict[int, float]:
    """Percentage of joints with error <= (k/100) * torso, pooled over
    everything passed in. Boundary counts as correct."""
    errors = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    torso = np.broadcast_to(np.asarray(torso, dtype=np.float64), (errors.shape[0],))
    out = {}
    for k in thresholds:
        limit = (k / 100.0) * torso[:, None]
        correct = int((errors <= limit).sum())
        out[int(k)] = 100.0 * correct / errors.size
    return out


def pck(pred: np.ndarray, gt: np.ndarray, thresholds=PCK_THRESHOLDS, *,
        align: bool = True) -> dict[int, float]:
    """PCK@k for one pose pair. `align=False` skips Procrustes and scores the
    raw distances; the default matches the reported metric."""
    pred, gt = _check_pair(pred, gt)
    ref = procrustes_align(pred, gt) if align else pred
    return pck_from_errors(joint_errors(ref, gt), torso_length(gt), thresholds)


def per_joint_mpjpe(preds: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Mean error per joint over a batch; preds/gts are (N, J, 3)."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape or preds.ndim != 3:
        raise CsiPoseError(f"batch shape mismatch: {preds.shape} vs {gts.shape}")
    return np.linalg.norm(preds - gts, axis=-1).mean(axis=0)


@dataclass
class MetricsReport:
    mpjpe_mm: float
    pa_mpjpe_mm: float
    pck: dict[int, float]
    per_joint_mpjpe_mm: list[float]
    n_samples: int
    joint_names: tuple[str, ...] = field(default=JOINT_NAMES)

    def validate(self) -> None:
        ks = sorted(self.pck)
        vals = [self.pck[k] for k in ks]
        if any(not (0.0 <= v <= 100.0) for v in vals):
            raise CsiPoseError(f"PCK out of [0, 100]: {self.pck}")
        if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
            raise CsiPoseError(f"PCK not monotone in threshold: {self.pck}")
        if not (self.mpjpe_mm + 1e-9 >= self.pa_mpjpe_mm >= 0.0):
            raise CsiPoseError(
                f"expected mpjpe >= pa_mpjpe >= 0, got {self.mpjpe_mm} / {self.pa_mpjpe_mm}")
        if abs(float(np.mean(self.per_joint_mpjpe_mm)) - self.mpjpe_mm) > 1e-9:
            raise CsiPoseError("per-joint mean disagrees with MPJPE")

    def to_dict(self) -> dict:
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "pa_mpjpe_mm": self.pa_mpjpe_mm,
            "pck": {str(k): v for k, v in sorted(self.pck.items())},
            "per_joint_mpjpe_mm": list(self.per_joint_mpjpe_mm),
            "joint_names": list(self.joint_names),
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            mpjpe_mm=float(d["mpjpe_mm"]),
            pa_mpjpe_mm=float(d["pa_mpjpe_mm"]),
            pck={int(k): float(v) for k, v in d["pck"].items()},
            per_joint_mpjpe_mm=[float(v) for v in d["per_joint_mpjpe_mm"]],
            n_samples=int(d["n_samples"]),
            joint_names=tuple(d.get("joint_names", JOINT_NAMES)),
        )

    @classmethod
    def from_json(cls, s: str) -> "MetricsReport":
        return cls.from_dict(json.loads(s))

    def table1_row(self, method: str) -> str:
        """One CSV row shaped like the headline comparison table."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(TABLE1_COLUMNS)
        writer.writerow([method] + [f"{self.pck[k]:.1f}" for k in PCK_THRESHOLDS]
                        + [f"{self.mpjpe_mm:.1f}", f"{self.pa_mpjpe_mm:.1f}"])
        return buf.getvalue()

    def per_joint_csv(self) -> str:
        """Per-joint MPJPE table in the canonical joint order plus an
        Average row."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["Joint", "MPJPE"])
        for name, err in zip(self.joint_names, self.per_joint_mpjpe_mm):
            writer.writerow([name, f"{err:.1f}"])
        writer.writerow(["Average", f"{self.mpjpe_mm:.1f}"])
        return buf.getvalue()


def evaluate_poses(preds: np.ndarray, gts: np.ndarray,
                   thresholds=PCK_THRESHOLDS) -> MetricsReport:
    """Aggregate all metrics over a batch of (N, J, 3) pose pairs.

    Each sample is Procrustes-aligned independently; PCK pools joints across
    the whole batch.
    """
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape or preds.ndim != 3:
        raise CsiPoseError(f"batch shape mismatch: {preds.shape} vs {gts.shape}")
    n = preds.shape[0]
    if n == 0:
        raise CsiPoseError("cannot evaluate an empty batch")
    aligned = np.stack([procrustes_align(p, g) for p, g in zip(preds, gts)])
    raw_err = np.linalg.norm(preds - gts, axis=-1)       # (N, J)
    aligned_err = np.linalg.norm(aligned - gts, axis=-1)  # (N, J)
    torso = np.array([torso_length(g) for g in gts])
    report = MetricsReport(
        mpjpe_mm=float(raw_err.mean()),
        pa_mpjpe_mm=float(aligned_err.mean()),
        pck=pck_from_errors(aligned_err, torso, thresholds),
        per_joint_mpjpe_mm=raw_err.mean(axis=0).tolist(),
        n_samples=n,
    )
    report.validate()
    return report
