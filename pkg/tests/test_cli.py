import json
import os

import numpy as np
import pytest

from csipose.cli import main
from csipose.dataset import load_mmfi, write_manifest, write_raw_sample
from csipose.metrics import TABLE1_COLUMNS
from csipose.model import load_checkpoint
from csipose.training import TrainHistory

# Small-but-real settings shared by the CLI tests: full pipeline, tiny cost.
FAST = [
    "--set", "data.synth.n_samples=40",
    "--set", "data.synth.n_subjects=4",
    "--set", "data.synth.n_environments=2",
    "--set", "data.synth.n_actions=2",
    "--set", "data.synth.S=32",
    "--set", "data.synth.T=4",
    "--set", "data.synth.A=2",
    "--set", "model.S=32", "--set", "model.T=4", "--set", "model.A=2",
    "--set", "model.D1=8", "--set", "model.D2=8", "--set", "model.D3=16",
    "--set", "model.W=2", "--set", "model.N=1",
    "--set", "training.epochs=2", "--set", "training.batch_size=16",
    "--set", "training.eval_every=1", "--set", "training.lr0=1e-3",
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata") / "corpus"
    assert main(["synth", "--out", str(root)] + FAST) == 0
    return root


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("clirun") / "run"
    code = main(["train", "--data", str(corpus), "--out", str(out)] + FAST)
    assert code == 0
    return out


def test_synth_writes_manifest_and_count(corpus):
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert manifest["n_samples"] == 40
    assert len(load_mmfi(corpus)) == 40
    # The embedded digest matches a fresh resolution of the same overrides.
    from csipose.config import RunConfig, apply_overrides
    resolved = RunConfig.resolve(overrides=apply_overrides(
        [a for a in FAST if a != "--set"]))
    assert manifest["config_digest"] == resolved.run_digest()


def test_synth_refuses_nonempty_out(corpus):
    assert main(["synth", "--out", str(corpus)] + FAST) == 2


def test_synth_force_overwrites(tmp_path):
    out = tmp_path / "c"
    assert main(["synth", "--out", str(out)] + FAST) == 0
    assert main(["synth", "--out", str(out), "--force"] + FAST) == 0


def test_unknown_config_key_rejected(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x"),
                 "--set", "data.nope=1"]) == 2


def test_train_artifacts_present(run_dir):
    for name in ("config.json", "history.jsonl", "checkpoint_last.gpfc",
                 "checkpoint_best.gpfc", "metrics_final.json"):
        assert (run_dir / name).exists(), name
    config = json.loads((run_dir / "config.json").read_text())
    history = TrainHistory.from_jsonl((run_dir / "history.jsonl").read_text())
    metrics = json.loads((run_dir / "metrics_final.json").read_text())
    assert (config["_digests"]["run"] == history.run_digest
            == metrics["run_digest"])
    digest, _ = load_checkpoint(run_dir / "checkpoint_last.gpfc")
    assert digest == config["_digests"]["model"]


def test_train_rerun_reproduces_history(tmp_path, corpus, run_dir):
    out = tmp_path / "again"
    assert main(["train", "--data", str(corpus), "--out", str(out)] + FAST) == 0
    a = TrainHistory.from_jsonl((run_dir / "history.jsonl").read_text())
    b = TrainHistory.from_jsonl((out / "history.jsonl").read_text())
    assert a.train_losses == b.train_losses
    assert a.lr_trace() == b.lr_trace()


def test_train_s2_single_subject_exits_2(tmp_path):
    corpus = tmp_path / "one"
    args = [a if a != "data.synth.n_subjects=4" else "data.synth.n_subjects=1"
            for a in FAST]
    args = [a if a != "data.synth.n_environments=2"
            else "data.synth.n_environments=1" for a in args]
    assert main(["synth", "--out", str(corpus)] + args) == 0
    assert main(["train", "--data", str(corpus), "--out", str(tmp_path / "r"),
                 "--split", "S2"] + args) == 2


def test_train_requires_data(tmp_path):
    assert main(["train", "--out", str(tmp_path / "r")] + FAST) == 2


def test_eval_matches_training_final_snapshot(tmp_path, corpus, run_dir):
    out = tmp_path / "eval"
    code = main(["eval", "--checkpoint", str(run_dir / "checkpoint_last.gpfc"),
                 "--data", str(corpus), "--out", str(out)])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    final = json.loads((run_dir / "metrics_final.json").read_text())
    assert metrics["report"] == final["report"]
    header = (out / "table1_row.csv").read_text().splitlines()[0]
    assert header == ",".join(TABLE1_COLUMNS)
    per_joint = (out / "per_joint.csv").read_text().splitlines()
    assert per_joint[0] == "Joint,MPJPE"
    assert per_joint[1].startswith("Bot Torso")


def test_eval_missing_checkpoint_exits_2(tmp_path, corpus):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.gpfc"),
                 "--data", str(corpus)]) == 2


def test_eval_digest_mismatch_refused(tmp_path, corpus, run_dir):
    cfg_path = tmp_path / "other.json"
    cfg_path.write_text(json.dumps({"model": {
        "A": 2, "S": 32, "T": 4, "D1": 8, "D2": 8, "D3": 16, "W": 2, "N": 2}}))
    assert main(["eval", "--checkpoint", str(run_dir / "checkpoint_last.gpfc"),
                 "--data", str(corpus), "--config", str(cfg_path)]) == 2


def test_report_renders_plots_and_summary(run_dir):
    assert main(["report", str(run_dir)]) == 0
    for name in ("loss_curve.png", "lr_trace.png", "per_joint_mpjpe.png",
                 "pck_curve.png", "summary.txt"):
        assert (run_dir / name).exists(), name
    summary = (run_dir / "summary.txt").read_text()
    metrics = json.loads((run_dir / "metrics_final.json").read_text())
    assert f"final MPJPE (mm): {metrics['report']['mpjpe_mm']:.3f}" in summary
    history = TrainHistory.from_jsonl((run_dir / "history.jsonl").read_text())
    assert f"final train loss: {history.train_losses[-1]:.6g}" in summary


def test_report_partial_run_warns(tmp_path, run_dir):
    import shutil
    partial = tmp_path / "partial"
    partial.mkdir()
    shutil.copy(run_dir / "history.jsonl", partial / "history.jsonl")
    shutil.copy(run_dir / "config.json", partial / "config.json")
    assert main(["report", str(partial)]) == 0
    assert (partial / "loss_curve.png").exists()
    assert not (partial / "pck_curve.png").exists()
    assert "warning" in (partial / "summary.txt").read_text()


def test_report_refuses_mixed_digests(tmp_path, run_dir):
    import shutil
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    shutil.copy(run_dir / "history.jsonl", mixed / "history.jsonl")
    metrics = json.loads((run_dir / "metrics_final.json").read_text())
    metrics["run_digest"] = "f" * 64
    (mixed / "metrics_final.json").write_text(json.dumps(metrics))
    assert main(["report", str(mixed)]) == 2


def test_report_empty_dir_exits_2(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty)]) == 2


def test_ingest_roundtrip(tmp_path, rng):
    raw = tmp_path / "raw"
    for i in range(3):
        csi = rng.normal(size=(2, 32, 4)) + 1j * rng.normal(size=(2, 32, 4))
        pose = rng.normal(size=(17, 3)).astype(np.float32)
        write_raw_sample(raw / "s0" / "e0" / "a0" / f"{i}.bin", csi, pose)
    write_manifest(raw, {"format": "gpfi-raw", "A": 2, "S": 32, "T": 4,
                         "J": 17, "units": "mm"})
    out = tmp_path / "canon"
    assert main(["ingest", "--raw", str(raw), "--out", str(out)]) == 0
    assert len(load_mmfi(out)) == 3


def test_gradcheck_command():
    assert main(["gradcheck", "--kind", "linear"]) == 0


def test_env_seed_override(tmp_path, corpus):
    out = tmp_path / "envseed"
    os.environ["GPFI_SEED"] = "123"
    try:
        assert main(["train", "--data", str(corpus), "--out", str(out)]
                    + FAST) == 0
        config = json.loads((out / "config.json").read_text())
        assert config["seed"] == 123
        assert config["training"]["seed"] == 123
    finally:
        del os.environ["GPFI_SEED"]


def test_split_flag_changes_digest(tmp_path, corpus, run_dir):
    out = tmp_path / "s3run"
    assert main(["train", "--data", str(corpus), "--out", str(out),
                 "--split", "S3"] + FAST) == 0
    a = json.loads((run_dir / "config.json").read_text())
    b = json.loads((out / "config.json").read_text())
    assert a["_digests"]["run"] != b["_digests"]["run"]
    assert a["_digests"]["model"] == b["_digests"]["model"]
