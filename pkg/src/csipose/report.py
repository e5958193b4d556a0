"""Render a finished (or partial) run directory into plots and a text summary.

Expected directory contents (written by `csipose train`): config.json,
history.jsonl, metrics_final.json. Produces loss_curve.png, lr_trace.png,
per_joint_mpjpe.png, pck_curve.png, and summary.txt; missing inputs produce
warnings instead of failures, but mixed config digests are refused.
"""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import CsiPoseError  # noqa: E402
from .metrics import MetricsReport  # noqa: E402
from .training import TrainHistory  # noqa: E402

PLOT_FILES = ("loss_curve.png", "lr_trace.png", "per_joint_mpjpe.png",
              "pck_curve.png")


def _check_digests(run_dir: Path, history: TrainHistory | None,
                   metrics_doc: dict | None) -> None:
    digests = set()
    cfg_path = run_dir / "config.json"
    if cfg_path.exists():
        with open(cfg_path) as fh:
            doc = json.load(fh)
        d = doc.get("_digests", {}).get("run")
        if d:
            digests.add(d)
    if history is not None and history.run_digest:
        digests.add(history.run_digest)
    if metrics_doc is not None and metrics_doc.get("run_digest"):
        digests.add(metrics_doc["run_digest"])
    if len(digests) > 1:
        raise CsiPoseError(
            f"{run_dir} mixes artifacts from different configs: {sorted(digests)}")


def render_report(run_dir: str | Path) -> list[str]:
    """Write plots + summary.txt; returns a list of warnings."""
    run_dir = Path(run_dir)
    warnings: list[str] = []

    history = None
    hist_path = run_dir / "history.jsonl"
    if hist_path.exists():
        history = TrainHistory.from_jsonl(hist_path.read_text())
    else:
        warnings.append("history.jsonl missing: loss and lr plots skipped")

    metrics_doc = None
    report = None
    metrics_path = run_dir / "metrics_final.json"
    if metrics_path.exists():
        with open(metrics_path) as fh:
            metrics_doc = json.load(fh)
        report = MetricsReport.from_dict(metrics_doc["report"])
    else:
        warnings.append("metrics_final.json missing: metric plots skipped")

    if history is None and report is None:
        raise CsiPoseError(f"{run_dir} holds no renderable artifacts")
    _check_digests(run_dir, history, metrics_doc)

    if history is not None:
        epochs = [r.epoch + 1 for r in history.records]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, history.train_losses, label="train MSE")
        val_pts = [(r.epoch + 1, r.val.mpjpe_mm) for r in history.records if r.val]
        if val_pts:
            ax2 = ax.twinx()
            ax2.plot(*zip(*val_pts), "o-", color="tab:orange", label="val MPJPE")
            ax2.set_ylabel("val MPJPE (mm)")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        ax.set_title("Training curves")
        fig.tight_layout()
        fig.savefig(run_dir / "loss_curve.png", dpi=120)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(history.lr_trace())
        ax.set_xlabel("step")
        ax.set_ylabel("learning rate")
        ax.set_title("Learning-rate schedule")
        fig.tight_layout()
        fig.savefig(run_dir / "lr_trace.png", dpi=120)
        plt.close(fig)

    if report is not None:
        fig, ax = plt.subplots(figsize=(8, 4))
        ax.bar(range(len(report.per_joint_mpjpe_mm)), report.per_joint_mpjpe_mm)
        ax.set_xticks(range(len(report.joint_names)))
        ax.set_xticklabels(report.joint_names, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("MPJPE (mm)")
        ax.set_title("Per-joint MPJPE")
        fig.tight_layout()
        fig.savefig(run_dir / "per_joint_mpjpe.png", dpi=120)
        plt.close(fig)

        ks = sorted(report.pck)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(ks, [report.pck[k] for k in ks], "o-")
        ax.set_xlabel("threshold k")
        ax.set_ylabel("PCK (%)")
        ax.set_ylim(0, 100)
        ax.set_title("PCK vs threshold")
        fig.tight_layout()
        fig.savefig(run_dir / "pck_curve.png", dpi=120)
        plt.close(fig)

    lines = [f"run directory: {run_dir}"]
    if history is not None:
        lines.append(f"recipe: {json.dumps(history.recipe)}")
        lines.append(f"epochs run: {len(history.records)}")
        if history.records:
            lines.append(f"final train loss: {history.train_losses[-1]:.6g}")
        if history.init_val is not None:
            lines.append(f"untrained val MPJPE (mm): {history.init_val.mpjpe_mm:.3f}")
    if report is not None:
        lines.append(f"final MPJPE (mm): {report.mpjpe_mm:.3f}")
        lines.append(f"final PA-MPJPE (mm): {report.pa_mpjpe_mm:.3f}")
        for k in sorted(report.pck):
            lines.append(f"final PCK@{k}: {report.pck[k]:.2f}")
        lines.append(f"samples evaluated: {report.n_samples}")
    for w in warnings:
        lines.append(f"warning: {w}")
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return warnings
