"""Generate a synthetic corpus, inspect it, and exercise the split protocols.

The generator animates a scaled rest skeleton with smooth per-bone rotations
and maps each pose through a fixed random sinusoidal feature map to CSI, so
the pose is genuinely recoverable from the tensor. A quick nearest-neighbor
probe demonstrates that recoverability.
"""
import tempfile
from pathlib import Path

import numpy as np

from csipose import (SplitSpec, SplitStrategy, SynthConfig, make_split,
                     materialize, mpjpe, synth_dataset)

root = Path(tempfile.mkdtemp()) / "corpus"
cfg = SynthConfig(n_samples=400, n_subjects=8, n_environments=4, n_actions=3,
                  noise_sigma=0.0)
index = synth_dataset(cfg, seed=42, out_dir=root)
print(f"wrote {len(index)} samples under {root}")
print(f"subjects: {index.subjects}")
print(f"environments: {index.environments}")
print(f"samples per environment: {index.counts_by_environment()}")

sample = index.load(0)
print(f"\none sample: z {sample.z.shape}, pose {sample.pose.shape} (mm), "
      f"subject {sample.subject_id}, env {sample.environment_id}")

print("\nsplit protocols:")
for strategy in SplitStrategy:
    train, test = make_split(index, SplitSpec(strategy=strategy, seed=0))
    shared_subj = set(s.subject_id for s in train.entries) & \
        set(s.subject_id for s in test.entries)
    print(f"  {strategy.value}: train {len(train):3d} / test {len(test):3d}"
          f"  shared subjects: {len(shared_subj)}")

print("\nnearest-neighbor probe (is pose information in z?)")
zs, poses = materialize(index)
flat = zs.reshape(len(zs), -1)
n_train = 300
rng = np.random.default_rng(0)
shuffle = rng.permutation(n_train)
nn, control = [], []
for i in range(n_train, len(zs)):
    j = int(np.argmin(np.linalg.norm(flat[:n_train] - flat[i], axis=1)))
    nn.append(mpjpe(poses[j], poses[i]))
    control.append(mpjpe(poses[shuffle[j]], poses[i]))
print(f"  1-NN MPJPE          {np.mean(nn):7.1f} mm")
print(f"  label-shuffled      {np.mean(control):7.1f} mm")
print("  the corpus is learnable: the nearest CSI neighbor has a much closer pose")
