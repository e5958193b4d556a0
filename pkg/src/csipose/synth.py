"""Learnable synthetic corpus generator.

Poses come from a kinematic tree: a rest skeleton (mm) scaled per subject,
with each bone smoothly rotated by sinusoidal angles in a sample-specific
motion phase, so bone lengths are preserved and nearby phases give nearby
poses. CSI is a fixed random sinusoidal feature map of the pose,

    z[a, s, t] = g_e * sum_j w[a, s, j] * cos(<u_j, Y_j> / lambda
                                              + phi[a, s, t, j] + d_e) + eps,

with eps ~ N(0, sigma^2) and (w, u, lambda, phi) drawn once from the seed and
recorded in the manifest, so the corpus is exactly reproducible and the pose
is recoverable from z. The per-environment gain g_e and phase offset d_e give
the cross-environment split a real domain shift.

Subjects are assigned to environments round-robin (each subject appears in
exactly one environment), mirroring how multi-environment capture campaigns
are organized.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetIndex, load_mmfi, write_manifest, write_sample
from .errors import CorpusError
from .skeleton import DEFAULT_EDGES, N_JOINTS

# Rest skeleton in mm, canonical joint order, pelvis at the origin, y up.
REST_POSE = np.array([
    [0.0, 0.0, 0.0],        # bot torso (pelvis)
    [-100.0, -40.0, 0.0],   # l hip
    [-105.0, -460.0, 0.0],  # l knee
    [-110.0, -880.0, 60.0],  # l foot
    [100.0, -40.0, 0.0],    # r hip
    [105.0, -460.0, 0.0],   # r knee
    [110.0, -880.0, 60.0],  # r foot
    [0.0, 220.0, 0.0],      # center torso
    [0.0, 440.0, 0.0],      # upper torso
    [0.0, 560.0, 0.0],      # neck base
    [0.0, 680.0, 0.0],      # center head
    [180.0, 520.0, 0.0],    # r shoulder
    [210.0, 240.0, 0.0],    # r elbow
    [220.0, -20.0, 40.0],   # r hand
    [-180.0, 520.0, 0.0],   # l shoulder
    [-210.0, 240.0, 0.0],   # l elbow
    [-220.0, -20.0, 40.0],  # l hand
])

# parent[j] for the default kinematic tree (root j=0 has parent -1).
_PARENT = {c: p for p, c in [(min(e), max(e)) for e in DEFAULT_EDGES]}


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 2000
    n_subjects: int = 10
    n_environments: int = 4
    n_actions: int = 4
    noise_sigma: float = 0.05
    A: int = 3
    S: int = 114
    T: int = 10
    J: int = N_JOINTS
    wavelength_mm: float = 150.0
    motion_amplitude: float = 0.35  # max bone-rotation amplitude, radians

    def validate(self) -> None:
        for name in ("n_samples", "n_subjects", "n_environments", "n_actions",
                     "A", "S", "T", "J"):
            if getattr(self, name) < 1:
                raise CorpusError(f"synth config: {name} must be positive")
        if self.noise_sigma < 0:
            raise CorpusError("synth config: noise_sigma must be >= 0")
        if self.J != N_JOINTS:
            raise CorpusError(f"synth generator only supports J={N_JOINTS}")


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    cross = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0.0]])
    return c * np.eye(3) + s * cross + (1 - c) * np.outer(axis, axis)


@dataclass(frozen=True)
class _MotionParams:
    axes: np.ndarray        # (J, 3) unit rotation axis per bone (root unused)
    amplitudes: np.ndarray  # (J,)
    frequencies: np.ndarray  # (J,)
    phases: np.ndarray      # (J,)
    drift: np.ndarray       # (3,) root translation amplitude, mm


def _draw_motion(rng: np.random.Generator, cfg: SynthConfig) -> _MotionParams:
    axes = rng.normal(size=(cfg.J, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return _MotionParams(
        axes=axes,
        amplitudes=rng.uniform(0.05, cfg.motion_amplitude, size=cfg.J),
        frequencies=rng.uniform(0.5, 2.0, size=cfg.J),
        phases=rng.uniform(0.0, 2 * np.pi, size=cfg.J),
        drift=rng.uniform(20.0, 80.0, size=3),
    )


def _pose_at(tau: float, scale: float, motion: _MotionParams) -> np.ndarray:
    """Forward kinematics over the default tree at motion phase tau."""
    j = REST_POSE.shape[0]
    pose = np.zeros((j, 3))
    chain = {0: np.eye(3)}
    pose[0] = motion.drift * np.sin(0.7 * tau + motion.phases[0])
    for child in range(1, j):
        parent = _PARENT[child]
        angle = motion.amplitudes[child] * np.sin(
            motion.frequencies[child] * tau + motion.phases[child])
        chain[child] = chain[parent] @ _rotation(motion.axes[child], angle)
        offset = scale * (REST_POSE[child] - REST_POSE[parent])
        pose[child] = pose[parent] + chain[child] @ offset
    return pose


def _csi_from_pose(pose: np.ndarray, fmap: dict, env_idx: int,
                   noise_rng: np.random.Generator | None,
                   sigma: float) -> np.ndarray:
    proj = (fmap["u"] * pose).sum(axis=1) / fmap["wavelength_mm"]  # (J,)
    arg = proj[None, None, None, :] + fmap["phi"] + fmap["env_phase"][env_idx]
    z = fmap["env_gain"][env_idx] * (fmap["w"][:, :, None, :] * np.cos(arg)).sum(axis=-1)
    if sigma > 0 and noise_rng is not None:
        z = z + noise_rng.normal(0.0, sigma, size=z.shape)
    return z


def _draw_feature_map(rng: np.random.Generator, cfg: SynthConfig) -> dict:
    return {
        "w": rng.normal(0.0, 1.0 / np.sqrt(cfg.J),
                        size=(cfg.A, cfg.S, cfg.J)),
        "u": rng.normal(size=(cfg.J, 3)),
        "phi": rng.uniform(0.0, 2 * np.pi, size=(cfg.A, cfg.S, cfg.T, cfg.J)),
        "env_phase": rng.uniform(0.0, 2 * np.pi, size=cfg.n_environments),
        "env_gain": rng.uniform(0.8, 1.2, size=cfg.n_environments),
        "wavelength_mm": cfg.wavelength_mm,
    }


def synth_dataset(cfg: SynthConfig, seed: int, out_dir) -> DatasetIndex:
    """Generate a corpus on disk and return its index.

    Identical (cfg, seed) pairs produce byte-identical corpora.
    """
    cfg.validate()
    root_seq = np.random.SeedSequence(seed)
    map_seq, subj_seq, act_seq, sample_seq = root_seq.spawn(4)
    fmap = _draw_feature_map(np.random.default_rng(map_seq), cfg)

    subj_rng = np.random.default_rng(subj_seq)
    scales = subj_rng.uniform(0.92, 1.08, size=cfg.n_subjects)
    act_rng = np.random.default_rng(act_seq)
    motions = [_draw_motion(act_rng, cfg) for _ in range(cfg.n_actions)]

    subjects = [f"s{i:02d}" for i in range(cfg.n_subjects)]
    environments = [f"e{i}" for i in range(cfg.n_environments)]
    actions = [f"a{i:02d}" for i in range(cfg.n_actions)]
    env_of_subject = {i: i % cfg.n_environments for i in range(cfg.n_subjects)}

    out_dir = Path(out_dir)
    per_key_counter: dict[tuple, int] = {}
    sample_rngs = sample_seq.spawn(cfg.n_samples)
    for i in range(cfg.n_samples):
        rng = np.random.default_rng(sample_rngs[i])
        subj = i % cfg.n_subjects
        act = (i // cfg.n_subjects) % cfg.n_actions
        env = env_of_subject[subj]
        tau = rng.uniform(0.0, 2 * np.pi)
        pose = _pose_at(tau, scales[subj], motions[act])
        z = _csi_from_pose(pose, fmap, env, rng, cfg.noise_sigma)
        key = (subj, env, act)
        idx = per_key_counter.get(key, 0)
        per_key_counter[key] = idx + 1
        path = (out_dir / subjects[subj] / environments[env] / actions[act]
                / f"{idx:05d}.bin")
        write_sample(path, z, pose)

    manifest = {
        "format": "gpfi-corpus",
        "version": 1,
        "A": cfg.A, "S": cfg.S, "T": cfg.T, "J": cfg.J,
        "units": "mm",
        "subjects": subjects,
        "environments": environments,
        "actions": actions,
        "n_samples": cfg.n_samples,
        "synth": {
            "seed": seed,
            "n_subjects": cfg.n_subjects,
            "n_environments": cfg.n_environments,
            "n_actions": cfg.n_actions,
            "noise_sigma": cfg.noise_sigma,
            "wavelength_mm": cfg.wavelength_mm,
            "motion_amplitude": cfg.motion_amplitude,
            "map": {
                "w": fmap["w"].tolist(),
                "u": fmap["u"].tolist(),
                "phi": fmap["phi"].tolist(),
                "env_phase": fmap["env_phase"].tolist(),
                "env_gain": fmap["env_gain"].tolist(),
            },
        },
    }
    write_manifest(out_dir, manifest)
    return load_mmfi(out_dir)
