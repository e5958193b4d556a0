"""End-to-end miniature run: synthesize, train, evaluate, render a report.

Uses a deliberately tiny corpus and model so the whole loop takes about a
minute on a laptop; the desk preset in the README scales this up.
"""
import tempfile
from pathlib import Path

from csipose import (PoseNet, SplitSpec, build_skeleton, desk_train_config,
                     evaluate, make_split, synth_dataset, train)
from csipose.model import desk_model_config
from csipose.synth import SynthConfig

work = Path(tempfile.mkdtemp())
print(f"working under {work}")

print("\n1. corpus: 300 samples, 6 subjects, 3 environments")
index = synth_dataset(SynthConfig(n_samples=300, n_subjects=6,
                                  n_environments=3, noise_sigma=0.05),
                      seed=1, out_dir=work / "corpus")
train_idx, val_idx = make_split(index, SplitSpec(seed=0))
print(f"   train {len(train_idx)} / val {len(val_idx)}")

print("\n2. model + short training run")
net = PoseNet(desk_model_config(), build_skeleton(), seed=0)
print(f"   {net.param_count():,} parameters")
result = train(net, train_idx, val_idx,
               desk_train_config(epochs=6, eval_every=3, lr0=3e-3),
               log=lambda msg: print("   " + msg))
init = result.history.init_val.mpjpe_mm
final = result.history.records[-1].val.mpjpe_mm
print(f"   val MPJPE: untrained {init:.0f} mm -> trained {final:.0f} mm")

print("\n3. evaluation report")
report = evaluate(net, val_idx)
print("   " + report.table1_row("mini-run").splitlines()[1])
worst = max(zip(report.per_joint_mpjpe_mm, report.joint_names))
print(f"   hardest joint: {worst[1]} at {worst[0]:.0f} mm")

print("\n4. the same pipeline is scriptable through the CLI:")
print("   csipose synth --preset desk --out corpus/")
print("   csipose train --preset desk --data corpus/ --out run/")
print("   csipose eval  --checkpoint run/checkpoint_best.gpfc --data corpus/")
print("   csipose report run/")
