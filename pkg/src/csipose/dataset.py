"""Corpus layout, sample serialization, index construction, and split protocols.

Canonical corpus layout::

    root/manifest.json
    root/<subject>/<environment>/<action>/<idx>.bin

The manifest declares the tensor dims (A, S, T, J), the pose units ("mm" or
"m"; meters are converted to millimeters on load), the subject / environment /
action vocabularies, and, for synthetic corpora, the generator parameters.

Sample file (little-endian): magic ``GPFI``, version u32, dims A,S,T,J as u32,
then the CSI tensor z as float32 row-major (A, S, T), then the pose as float32
row-major (J, 3).

Raw-capture file (accepted by ``csipose ingest``): magic ``GPFR``, same header,
then T frames of interleaved re/im float32 with shape (T, A, S, 2), then the
pose. Raw files go through `preprocess_window` during ingestion.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CorpusError, SplitError
from .preprocess import RawCsiFrame, normalize_sample, preprocess_window

SAMPLE_MAGIC = b"GPFI"
RAW_MAGIC = b"GPFR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, A, S, T, J


@dataclass(frozen=True)
class CsiSample:
    """One preprocessed window paired with its ground-truth pose (mm)."""

    z: np.ndarray          # (A, S, T) float32
    pose: np.ndarray       # (J, 3) float64, millimeters
    subject_id: str
    environment_id: str
    action_id: str


@dataclass(frozen=True)
class IndexEntry:
    path: Path
    subject_id: str
    environment_id: str
    action_id: str


class DatasetIndex:
    """Immutable list of resolvable samples plus the corpus manifest."""

    def __init__(self, root: Path, entries: tuple[IndexEntry, ...], manifest: dict):
        self.root = Path(root)
        self.entries = tuple(entries)
        self.manifest = manifest

    @property
    def dims(self) -> tuple[int, int, int, int]:
        m = self.manifest
        return (int(m["A"]), int(m["S"]), int(m["T"]), int(m["J"]))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted({e.subject_id for e in self.entries}))

    @property
    def environments(self) -> tuple[str, ...]:
        return tuple(sorted({e.environment_id for e in self.entries}))

    def counts_by_subject(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.subject_id] = out.get(e.subject_id, 0) + 1
        return out

    def counts_by_environment(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.environment_id] = out.get(e.environment_id, 0) + 1
        return out

    def load(self, i: int) -> CsiSample:
        entry = self.entries[i]
        z, pose = read_sample(entry.path, self.dims)
        if self.manifest.get("units", "mm") == "m":
            pose = pose * 1000.0
        return CsiSample(z=z, pose=pose, subject_id=entry.subject_id,
                         environment_id=entry.environment_id,
                         action_id=entry.action_id)

    def subset(self, entries) -> "DatasetIndex":
        return DatasetIndex(self.root, tuple(entries), self.manifest)


def write_sample(path: Path, z: np.ndarray, pose: np.ndarray) -> None:
    z = np.ascontiguousarray(z, dtype="<f4")
    pose = np.ascontiguousarray(pose, dtype="<f4")
    a, s, t = z.shape
    j = pose.shape[0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SAMPLE_MAGIC, FORMAT_VERSION, a, s, t, j))
        fh.write(z.tobytes())
        fh.write(pose.tobytes())


def _read_header(path: Path, expected_magic: bytes):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise CorpusError(f"truncated header in {path}")
        magic, version, a, s, t, j = _HEADER.unpack(raw)
        if magic != expected_magic:
            raise CorpusError(f"bad magic {magic!r} in {path}")
        if version != FORMAT_VERSION:
            raise CorpusError(f"unsupported version {version} in {path}")
        return (a, s, t, j), fh.read()


def read_sample(path: Path, expected_dims=None) -> tuple[np.ndarray, np.ndarray]:
    """Read one canonical sample file; returns (z, pose) in file units."""
    (a, s, t, j), body = _read_header(path, SAMPLE_MAGIC)
    if expected_dims is not None and (a, s, t, j) != tuple(expected_dims):
        raise CorpusError(
            f"{path}: dims {(a, s, t, j)} do not match manifest {tuple(expected_dims)}")
    need = (a * s * t + j * 3) * 4
    if len(body) != need:
        raise CorpusError(f"{path}: expected {need} payload bytes, got {len(body)}")
    z = np.frombuffer(body[: a * s * t * 4], dtype="<f4").reshape(a, s, t)
    pose = np.frombuffer(body[a * s * t * 4:], dtype="<f4").reshape(j, 3)
    if not np.all(np.isfinite(z)) or not np.all(np.isfinite(pose)):
        raise CorpusError(f"{path}: non-finite values")
    return z.copy(), pose.astype(np.float64)


def write_raw_sample(path: Path, csi: np.ndarray, pose: np.ndarray) -> None:
    """Write a raw complex window: csi is complex (A, S, T)."""
    csi = np.asarray(csi)
    a, s, t = csi.shape
    frames = np.empty((t, a, s, 2), dtype="<f4")
    frames[..., 0] = csi.real.transpose(2, 0, 1)
    frames[..., 1] = csi.imag.transpose(2, 0, 1)
    pose = np.ascontiguousarray(pose, dtype="<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RAW_MAGIC, FORMAT_VERSION, a, s, t, pose.shape[0]))
        fh.write(frames.tobytes())
        fh.write(pose.tobytes())


def read_raw_sample(path: Path) -> tuple[list[RawCsiFrame], np.ndarray]:
    (a, s, t, j), body = _read_header(path, RAW_MAGIC)
    need = (t * a * s * 2 + j * 3) * 4
    if len(body) != need:
        raise CorpusError(f"{path}: expected {need} payload bytes, got {len(body)}")
    flat = np.frombuffer(body[: t * a * s * 2 * 4], dtype="<f4").reshape(t, a, s, 2)
    pose = np.frombuffer(body[t * a * s * 2 * 4:], dtype="<f4").reshape(j, 3)
    frames = [RawCsiFrame(values=(flat[k, ..., 0] + 1j * flat[k, ..., 1]).astype(np.complex128),
                          timestamp=k)
              for k in range(t)]
    return frames, pose.astype(np.float64)


def write_manifest(root: Path, manifest: dict) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def read_manifest(root: Path) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise CorpusError(f"missing manifest: {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    for key in ("A", "S", "T", "J", "units"):
        if key not in manifest:
            raise CorpusError(f"{path}: manifest missing key {key!r}")
    if manifest["units"] not in ("mm", "m"):
        raise CorpusError(f"{path}: unknown units {manifest['units']!r}")
    return manifest


def load_mmfi(root) -> DatasetIndex:
    """Index a canonical corpus tree, validating every sample header."""
    root = Path(root)
    manifest = read_manifest(root)
    dims = (int(manifest["A"]), int(manifest["S"]), int(manifest["T"]),
            int(manifest["J"]))
    entries = []
    for path in sorted(root.glob("*/*/*/*.bin")):
        action = path.parent.name
        env = path.parent.parent.name
        subject = path.parent.parent.parent.name
        (a, s, t, j), _ = _read_header(path, SAMPLE_MAGIC)
        if (a, s, t, j) != dims:
            raise CorpusError(
                f"{path}: dims {(a, s, t, j)} do not match manifest {dims}")
        entries.append(IndexEntry(path=path, subject_id=subject,
                                  environment_id=env, action_id=action))
    if not entries:
        raise CorpusError(f"no samples under {root}")
    declared = manifest.get("n_samples")
    if declared is not None and declared != len(entries):
        raise CorpusError(
            f"{root}: manifest declares {declared} samples, found {len(entries)}")
    return DatasetIndex(root=root, entries=tuple(entries), manifest=manifest)


def ingest_raw_tree(raw_root, out_root) -> DatasetIndex:
    """Convert a tree of raw complex windows into a canonical corpus."""
    raw_root = Path(raw_root)
    out_root = Path(out_root)
    manifest = read_manifest(raw_root)
    if manifest.get("format") != "gpfi-raw":
        raise CorpusError(f"{raw_root}: manifest format is not 'gpfi-raw'")
    n = 0
    for path in sorted(raw_root.glob("*/*/*/*.bin")):
        frames, pose = read_raw_sample(path)
        z = preprocess_window(frames)
        rel = path.relative_to(raw_root)
        write_sample(out_root / rel, z, pose)
        n += 1
    if n == 0:
        raise CorpusError(f"no raw samples under {raw_root}")
    out_manifest = dict(manifest)
    out_manifest["format"] = "gpfi-corpus"
    out_manifest["n_samples"] = n
    write_manifest(out_root, out_manifest)
    return load_mmfi(out_root)


class SplitStrategy(str, Enum):
    S1 = "S1"  # random split, 3:1 train/test
    S2 = "S2"  # cross-subject
    S3 = "S3"  # cross-environment


@dataclass(frozen=True)
class SplitSpec:
    strategy: SplitStrategy = SplitStrategy.S1
    seed: int = 0
    test_ratio: float = 0.25          # S1
    test_subjects: tuple[str, ...] | None = None  # S2 override
    holdout_environment: str | None = None        # S3 override


def make_split(index: DatasetIndex, spec: SplitSpec) -> tuple[DatasetIndex, DatasetIndex]:
    """Partition the index per the chosen protocol; deterministic in the seed.

    S1 shuffles samples and holds out `test_ratio` (3:1 by default). S2 holds
    out whole subjects: 8 of 40 when the corpus has exactly 40 subjects,
    otherwise a 20% subject fraction. S3 holds out one environment.
    """
    if len(index) == 0:
        raise SplitError("cannot split an empty index")
    rng = np.random.default_rng(spec.seed)
    strategy = SplitStrategy(spec.strategy)

    if strategy is SplitStrategy.S1:
        order = rng.permutation(len(index))
        n_test = int(round(len(index) * spec.test_ratio))
        n_test = min(max(n_test, 1), len(index) - 1) if len(index) > 1 else 0
        test_ids = set(order[:n_test].tolist())
        train = [e for i, e in enumerate(index.entries) if i not in test_ids]
        test = [e for i, e in enumerate(index.entries) if i in test_ids]
    elif strategy is SplitStrategy.S2:
        subjects = list(index.subjects)
        if len(subjects) < 2:
            raise SplitError(
                f"cross-subject split needs >= 2 subjects, corpus has {len(subjects)}")
        if spec.test_subjects is not None:
            test_subjects = set(spec.test_subjects)
            unknown = test_subjects - set(subjects)
            if unknown:
                raise SplitError(f"unknown test subjects: {sorted(unknown)}")
            if not (0 < len(test_subjects) < len(subjects)):
                raise SplitError("test subjects must be a proper non-empty subset")
        else:
            if len(subjects) == 40:
                n_test = 8
            else:
                n_test = min(max(int(round(len(subjects) * 0.2)), 1),
                             len(subjects) - 1)
            shuffled = list(rng.permutation(subjects))
            test_subjects = set(shuffled[:n_test])
        train = [e for e in index.entries if e.subject_id not in test_subjects]
        test = [e for e in index.entries if e.subject_id in test_subjects]
    elif strategy is SplitStrategy.S3:
        envs = list(index.environments)
        if len(envs) < 2:
            raise SplitError(
                f"cross-environment split needs >= 2 environments, corpus has {len(envs)}")
        if spec.holdout_environment is not None:
            holdout = spec.holdout_environment
            if holdout not in envs:
                raise SplitError(f"unknown environment {holdout!r}")
        else:
            holdout = str(rng.choice(envs))
        train = [e for e in index.entries if e.environment_id != holdout]
        test = [e for e in index.entries if e.environment_id == holdout]
    else:  # pragma: no cover
        raise SplitError(f"unknown strategy {spec.strategy!r}")

    if not train or not test:
        raise SplitError("split produced an empty side")
    return index.subset(train), index.subset(test)


def materialize(index: DatasetIndex, *, normalize: bool = True,
                dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Load every sample into memory: returns (z (N,A,S,T), poses (N,J,3)).

    Applies per-sample z-score normalization by default, matching what the
    model expects at its input.
    """
    a, s, t, j = index.dims
    zs = np.empty((len(index), a, s, t), dtype=dtype)
    poses = np.empty((len(index), j, 3), dtype=np.float64)
    for i in range(len(index)):
        sample = index.load(i)
        z = sample.z
        if normalize:
            z = normalize_sample(z)
        zs[i] = z.astype(dtype)
        poses[i] = sample.pose
    return zs, poses
