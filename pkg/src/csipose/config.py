"""Declarative run configuration: one JSON document covering data, skeleton,
model, training, and metrics. Unknown keys are rejected; every artifact a run
writes embeds the resolved config's digest so mixed-provenance directories
are detectable.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .dataset import SplitSpec, SplitStrategy
from .errors import ConfigError
from .metrics import PCK_THRESHOLDS
from .model import ModelConfig, model_digest
from .skeleton import DEFAULT_EDGES, build_skeleton
from .synth import SynthConfig
from .training import TrainConfig

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "data": {
        "root": None,
        "normalize": True,
        "split": {
            "strategy": "S1",
            "seed": None,          # falls back to top-level seed
            "test_ratio": 0.25,
            "test_subjects": None,
            "holdout_environment": None,
        },
        "synth": {
            "n_samples": 2000,
            "n_subjects": 10,
            "n_environments": 4,
            "n_actions": 4,
            "noise_sigma": 0.05,
            "A": 3, "S": 114, "T": 10, "J": 17,
            "wavelength_mm": 150.0,
            "motion_amplitude": 0.35,
        },
    },
    "skeleton": {"edges": [list(e) for e in DEFAULT_EDGES]},
    "model": ModelConfig().to_dict(),
    "training": {
        "lr0": 3e-4,
        "weight_decay": 0.02,
        "epochs": 50,
        "batch_size": 256,
        "schedule": "cosine",
        "lr_floor": 1e-7,
        "betas": [0.9, 0.999],
        "eps": 1e-8,
        "seed": 0,
        "eval_every": 1,
        "shuffle": True,
        "decay_norm_params": False,
    },
    "metrics": {"pck_thresholds": list(PCK_THRESHOLDS)},
}

# CPU-scale preset: smaller model widths and a short schedule, same shapes.
DESK_PRESET: dict = {
    "data": {"synth": {"n_samples": 2000}},
    "model": {"D1": 32, "D2": 32, "D3": 64, "N": 2},
    "training": {"lr0": 3e-3, "epochs": 20, "batch_size": 64, "eval_every": 5},
}

PRESETS = {"default": {}, "desk": DESK_PRESET}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully resolved configuration for one run."""

    raw: dict

    @classmethod
    def resolve(cls, overrides: dict | None = None, preset: str = "default",
                path: str | Path | None = None) -> "RunConfig":
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
        cfg = _merge(DEFAULT_CONFIG, PRESETS[preset])
        if path is not None:
            try:
                with open(path) as fh:
                    file_cfg = json.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}")
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}")
            if not isinstance(file_cfg, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
            file_cfg.pop("_digests", None)  # dumped configs carry their digests
            cfg = _merge(cfg, file_cfg)
        if overrides:
            cfg = _merge(cfg, overrides)
        run = cls(raw=cfg)
        run.validate()
        return run

    # -- typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.raw["model"])

    def train_config(self) -> TrainConfig:
        t = dict(self.raw["training"])
        t["betas"] = tuple(t["betas"])
        return TrainConfig(**t)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**self.raw["data"]["synth"])

    def split_spec(self) -> SplitSpec:
        s = self.raw["data"]["split"]
        seed = s["seed"] if s["seed"] is not None else self.seed
        return SplitSpec(strategy=SplitStrategy(s["strategy"]), seed=int(seed),
                         test_ratio=float(s["test_ratio"]),
                         test_subjects=(tuple(s["test_subjects"])
                                        if s["test_subjects"] else None),
                         holdout_environment=s["holdout_environment"])

    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(tuple(e) for e in self.raw["skeleton"]["edges"])

    def pck_thresholds(self) -> tuple[int, ...]:
        return tuple(int(k) for k in self.raw["metrics"]["pck_thresholds"])

    def validate(self) -> None:
        self.model_config().validate()
        self.train_config().validate()
        self.synth_config().validate()
        self.split_spec()
        build_skeleton(self.model_config().J, self.edges())
        if self.model_config().J != self.synth_config().J:
            raise ConfigError("model J and synth J disagree")

    # -- digests ---------------------------------------------------------------

    def run_digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def model_digest(self) -> str:
        return model_digest(self.model_config(), self.edges())

    def dump(self, path: str | Path) -> None:
        doc = dict(self.raw)
        doc["_digests"] = {"run": self.run_digest(), "model": self.model_digest()}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    @classmethod
    def load_dumped(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            doc = json.load(fh)
        doc.pop("_digests", None)
        run = cls(raw=_merge(DEFAULT_CONFIG, doc))
        run.validate()
        return run


def parse_set_override(text: str) -> tuple[list[str], object]:
    """Parse one --set dotted.path=value override; values are JSON literals
    with bare-string fallback."""
    if "=" not in text:
        raise ConfigError(f"--set expects key.path=value, got {text!r}")
    key, value = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"--set has an empty key in {text!r}")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return parts, parsed


def apply_overrides(overrides: list[str]) -> dict:
    out: dict = {}
    for item in overrides:
        parts, value = parse_set_override(item)
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out
