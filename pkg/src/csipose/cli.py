"""Command-line interface.

Commands: synth, ingest, train, eval, ablate, report, gradcheck. Exit codes:
0 success, 1 internal error, 2 user/config error. Configuration comes from
one JSON file plus flag overrides (flags win); the environment variable
GPFI_SEED overrides every configured seed.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import traceback
from pathlib import Path

from .config import RunConfig, apply_overrides
from .dataset import ingest_raw_tree, load_mmfi, make_split, write_manifest
from .errors import CsiPoseError
from .model import PoseNet, load_checkpoint, save_checkpoint
from .skeleton import build_skeleton
from .training import evaluate, grad_check, train

ABLATION_AGGREGATOR_ROWS = ("GAP", "PJ-MHSA", "LTSA (ours)")
ABLATION_HEAD_ROWS = ("MLP regression head",
                      "Graph-based regression head (N = 2)",
                      "Graph-based regression head (N = 4)",
                      "Graph-based regression head (N = 6)")


def _ensure_out_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise CsiPoseError(
            f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)


def _resolve_config(args) -> RunConfig:
    overrides = apply_overrides(getattr(args, "set", None) or [])
    if getattr(args, "split", None):
        overrides.setdefault("data", {}).setdefault("split", {})["strategy"] = args.split
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        overrides.setdefault("training", {})["seed"] = args.seed
    env_seed = os.environ.get("GPFI_SEED")
    if env_seed is not None:
        overrides["seed"] = int(env_seed)
        overrides.setdefault("training", {})["seed"] = int(env_seed)
    return RunConfig.resolve(overrides=overrides, preset=args.preset,
                             path=getattr(args, "config", None))


def _train_into(cfg: RunConfig, data_root: Path, out_dir: Path, *,
                quiet: bool = False) -> float:
    """Split, train, evaluate, and write all artifacts. Returns final MPJPE."""
    index = load_mmfi(data_root)
    train_idx, test_idx = make_split(index, cfg.split_spec())
    model_cfg = cfg.model_config()
    graph = build_skeleton(model_cfg.J, cfg.edges())
    net = PoseNet(model_cfg, graph, seed=cfg.seed)
    log = None if quiet else print
    result = train(net, train_idx, test_idx, cfg.train_config(), log=log,
                   thresholds=cfg.pck_thresholds())

    result.history.run_digest = cfg.run_digest()
    result.history.model_digest = cfg.model_digest()
    cfg.dump(out_dir / "config.json")
    (out_dir / "history.jsonl").write_text(result.history.to_jsonl())
    save_checkpoint(out_dir / "checkpoint_last.gpfc", result.last_state,
                    cfg.model_digest())
    save_checkpoint(out_dir / "checkpoint_best.gpfc", result.best_state,
                    cfg.model_digest())
    final = (result.history.records[-1].val if result.history.records
             else result.history.init_val)
    with open(out_dir / "metrics_final.json", "w") as fh:
        json.dump({"report": final.to_dict(), "run_digest": cfg.run_digest(),
                   "model_digest": cfg.model_digest()}, fh, indent=2)
    return final.mpjpe_mm


def cmd_synth(args) -> int:
    from .synth import synth_dataset
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    _ensure_out_dir(out_dir, args.force)
    index = synth_dataset(cfg.synth_config(), cfg.seed, out_dir)
    manifest = dict(index.manifest)
    manifest["config_digest"] = cfg.run_digest()
    write_manifest(out_dir, manifest)
    print(f"wrote {len(index)} samples to {out_dir}")
    return 0


def cmd_ingest(args) -> int:
    out_dir = Path(args.out)
    _ensure_out_dir(out_dir, args.force)
    index = ingest_raw_tree(Path(args.raw), out_dir)
    print(f"ingested {len(index)} raw windows into {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data_root = Path(args.data) if args.data else (
        Path(cfg.raw["data"]["root"]) if cfg.raw["data"]["root"] else None)
    if data_root is None:
        raise CsiPoseError("no data root: pass --data or set data.root in the config")
    out_dir = Path(args.out)
    _ensure_out_dir(out_dir, args.force)
    mpjpe_mm = _train_into(cfg, data_root, out_dir)
    print(f"final val MPJPE {mpjpe_mm:.2f} mm; artifacts in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise CsiPoseError(f"checkpoint not found: {ckpt_path}")
    if args.config is None:
        sibling = ckpt_path.parent / "config.json"
        if not sibling.exists():
            raise CsiPoseError(
                "no config: pass --config or keep config.json next to the checkpoint")
        cfg = RunConfig.load_dumped(sibling)
        if getattr(args, "split", None):
            cfg = RunConfig.resolve(
                overrides={"data": {"split": {"strategy": args.split}}},
                path=sibling)
    else:
        cfg = _resolve_config(args)
    digest, state = load_checkpoint(ckpt_path)
    if digest != cfg.model_digest() and not args.force:
        raise CsiPoseError(
            f"checkpoint digest {digest[:12]} does not match config "
            f"{cfg.model_digest()[:12]} (use --force to evaluate anyway)")
    model_cfg = cfg.model_config()
    graph = build_skeleton(model_cfg.J, cfg.edges())
    net = PoseNet(model_cfg, graph, seed=cfg.seed)
    net.load_state(state)

    index = load_mmfi(Path(args.data))
    _, test_idx = make_split(index, cfg.split_spec())
    report = evaluate(net, test_idx, cfg.train_config().batch_size,
                      thresholds=cfg.pck_thresholds())
    out_dir = Path(args.out) if args.out else ckpt_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump({"report": report.to_dict(), "run_digest": cfg.run_digest(),
                   "model_digest": cfg.model_digest()}, fh, indent=2)
    (out_dir / "table1_row.csv").write_text(report.table1_row(args.method))
    (out_dir / "per_joint.csv").write_text(report.per_joint_csv())
    print(report.table1_row(args.method).strip())
    return 0


def _ablation_variants(base: RunConfig) -> list[tuple[str, RunConfig]]:
    """Six unique runs; the LTSA/graph/N=4 base appears in both tables."""
    base_over = {"model": {"aggregator": "ltsa", "head": "graph", "N": 4}}

    def variant(extra: dict) -> RunConfig:
        merged = {"model": {**base_over["model"], **extra.get("model", {})}}
        return RunConfig.resolve(overrides=_deep_merge_raw(base.raw, merged))

    return [
        ("GAP", variant({"model": {"aggregator": "gap"}})),
        ("PJ-MHSA", variant({"model": {"aggregator": "pj_mhsa"}})),
        ("LTSA (ours)", variant({})),
        ("MLP regression head", variant({"model": {"head": "mlp"}})),
        ("Graph-based regression head (N = 2)", variant({"model": {"N": 2}})),
        ("Graph-based regression head (N = 6)", variant({"model": {"N": 6}})),
    ]


def _deep_merge_raw(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge_raw(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label.lower()).strip("_")


def _run_ablation_case(raw_cfg: dict, data_root: str, run_dir: str,
                       label: str) -> tuple[str, float]:
    cfg = RunConfig(raw=raw_cfg)
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    mpjpe_mm = _train_into(cfg, Path(data_root), out, quiet=True)
    return label, mpjpe_mm


def cmd_ablate(args) -> int:
    base = _resolve_config(args)
    data_root = Path(args.data)
    out_dir = Path(args.out)
    _ensure_out_dir(out_dir, args.force)
    variants = _ablation_variants(base)
    digests = [cfg.model_digest() for _, cfg in variants]
    if len(set(digests)) != len(digests):
        raise CsiPoseError("ablation variants collapsed to identical architectures")

    jobs = [(cfg.raw, str(data_root), str(out_dir / "runs" / _slug(label)), label)
            for label, cfg in variants]
    results: dict[str, float] = {}
    if args.parallel > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            for label, mpjpe_mm in pool.map(_run_ablation_case, *zip(*jobs)):
                results[label] = mpjpe_mm
                print(f"{label}: MPJPE {mpjpe_mm:.2f} mm")
    else:
        for job in jobs:
            label, mpjpe_mm = _run_ablation_case(*job)
            results[label] = mpjpe_mm
            print(f"{label}: MPJPE {mpjpe_mm:.2f} mm")

    n4 = results["LTSA (ours)"]
    agg_rows = [("GAP", results["GAP"]), ("PJ-MHSA", results["PJ-MHSA"]),
                ("LTSA (ours)", n4)]
    head_rows = [("MLP regression head", results["MLP regression head"]),
                 ("Graph-based regression head (N = 2)",
                  results["Graph-based regression head (N = 2)"]),
                 ("Graph-based regression head (N = 4)", n4),
                 ("Graph-based regression head (N = 6)",
                  results["Graph-based regression head (N = 6)"])]
    for name, rows in (("table_aggregator.csv", agg_rows),
                       ("table_head.csv", head_rows)):
        lines = ["Method,MPJPE (mm)"]
        lines += [f"{label},{value:.1f}" for label, value in rows]
        (out_dir / name).write_text("\n".join(lines) + "\n")
    with open(out_dir / "ablation_summary.json", "w") as fh:
        json.dump({
            "results_mpjpe_mm": results,
            "model_digests": {label: cfg.model_digest() for label, cfg in variants},
            "base_run_digest": base.run_digest(),
        }, fh, indent=2)
    print(f"ablation tables in {out_dir}")
    return 0


def cmd_report(args) -> int:
    from .report import render_report
    warnings = render_report(Path(args.run_dir))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"report written to {args.run_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    err = grad_check(seed=args.seed if args.seed is not None else 0,
                     kind=args.kind, verbose=True)
    ok = err < 1e-4
    print(f"max relative error {err:.3e}: {'OK' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csipose",
        description="WiFi CSI to 3D human pose: corpus tools, training, "
                    "evaluation, ablations, and reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, split=False):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--preset", default="default", help="default or desk")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="config override, repeatable (flags win over the file)")
        p.add_argument("--seed", type=int, help="override every configured seed")
        p.add_argument("--force", action="store_true",
                       help="overwrite non-empty output directories")
        if split:
            p.add_argument("--split", choices=["S1", "S2", "S3"],
                           help="split protocol override")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert raw complex CSI windows to a corpus")
    common(p)
    p.add_argument("--raw", required=True, help="raw tree root (GPFR files)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="split, train, evaluate, write artifacts")
    common(p, split=True)
    p.add_argument("--data", help="corpus root (defaults to config data.root)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split's test side")
    common(p, split=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output directory (default: checkpoint's)")
    p.add_argument("--method", default="ours", help="method label for the CSV row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the aggregator and head ablation grids")
    common(p, split=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1,
                   help="run up to N trainings concurrently")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render plots and a text summary for a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--kind", choices=["full", "linear"], default="full")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CsiPoseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
