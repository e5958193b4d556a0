"""Objective, optimizer schedule, training loop, evaluation, and the
finite-difference gradient audit.

The default recipe is decoupled-weight-decay Adam at lr 3e-4, weight decay
0.02, cosine decay to near zero over 50 epochs, batch size 256. The desk
preset (`desk_train_config`) shrinks epochs and batch so the whole loop runs
on a laptop CPU against the synthetic corpus.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import DatasetIndex, materialize
from .errors import ConfigError, CsiPoseError, DivergenceError
from .metrics import MetricsReport, evaluate_poses
from .model import ModelConfig, PoseNet, tiny_model_config
from .skeleton import build_skeleton


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-4
    weight_decay: float = 0.02
    epochs: int = 50
    batch_size: int = 256
    schedule: str = "cosine"
    lr_floor: float = 1e-7
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1
    shuffle: bool = True
    decay_norm_params: bool = False  # include norm gains/biases in weight decay

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")

    def recipe(self) -> dict:
        """The optimizer settings echoed into every history file."""
        return {
            "optimizer": "adamw",
            "lr0": self.lr0,
            "weight_decay": self.weight_decay,
            "schedule": self.schedule,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }


def desk_train_config(**overrides) -> TrainConfig:
    # Higher lr than the full recipe: a desk run has ~500 optimizer steps.
    base = dict(lr0=3e-3, epochs=20, batch_size=64, eval_every=5)
    base.update(overrides)
    return TrainConfig(**base)


def mse_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean over samples of (1/J) sum_j ||pred_j - gt_j||^2."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise CsiPoseError(f"loss shape mismatch: {pred.shape} vs {gt.shape}")
    diff = pred - gt
    j = pred.shape[-2]
    per_sample = (diff ** 2).sum(axis=(-1, -2)) / j
    return float(np.mean(per_sample))


def mse_loss_grad(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    pred64 = np.asarray(pred, dtype=np.float64)
    gt64 = np.asarray(gt, dtype=np.float64)
    diff = pred64 - gt64
    j = pred64.shape[-2]
    b = int(np.prod(pred64.shape[:-2])) if pred64.ndim > 2 else 1
    loss = float((diff ** 2).sum() / (j * b))
    return loss, (2.0 / (j * b)) * diff


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine decay from lr0 to (near) zero, floored at cfg.lr_floor."""
    if cfg.schedule == "constant":
        return cfg.lr0
    total = max(total_steps, 1)
    frac = min(max(step / total, 0.0), 1.0)
    lr = cfg.lr0 * 0.5 * (1.0 + np.cos(np.pi * frac))
    return float(max(lr, cfg.lr_floor))


class AdamW:
    """Adam with decoupled weight decay. Parameters flagged `decay=False`
    (norm gains/biases) are never decayed."""

    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        b1, b2 = self.cfg.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.cfg.eps)
            if (p.decay or self.cfg.decay_norm_params) and self.cfg.weight_decay > 0.0:
                update = update + self.cfg.weight_decay * p.data
            p.data -= lr * update

    def zero_grads(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    lrs: list[float]
    wall_clock_s: float
    val: MetricsReport | None = None

    def to_dict(self) -> dict:
        d = {"epoch": self.epoch, "train_loss": self.train_loss,
             "lrs": self.lrs, "wall_clock_s": self.wall_clock_s}
        d["val"] = self.val.to_dict() if self.val is not None else None
        return d


@dataclass
class TrainHistory:
    recipe: dict
    model_digest: str = ""
    run_digest: str = ""
    init_val: MetricsReport | None = None
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def lr_trace(self) -> list[float]:
        out = []
        for r in self.records:
            out.extend(r.lrs)
        return out

    def to_jsonl(self) -> str:
        lines = [json.dumps({
            "type": "meta", "recipe": self.recipe,
            "model_digest": self.model_digest, "run_digest": self.run_digest,
            "init_val": self.init_val.to_dict() if self.init_val else None,
        })]
        lines += [json.dumps({"type": "epoch", **r.to_dict()}) for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainHistory":
        history = None
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            if d["type"] == "meta":
                history = cls(recipe=d["recipe"], model_digest=d["model_digest"],
                              run_digest=d["run_digest"],
                              init_val=MetricsReport.from_dict(d["init_val"])
                              if d.get("init_val") else None)
            elif d["type"] == "epoch":
                if history is None:
                    raise CsiPoseError("history file has no meta record")
                history.records.append(EpochRecord(
                    epoch=d["epoch"], train_loss=d["train_loss"], lrs=d["lrs"],
                    wall_clock_s=d["wall_clock_s"],
                    val=MetricsReport.from_dict(d["val"]) if d.get("val") else None))
        if history is None:
            raise CsiPoseError("empty history file")
        return history


@dataclass
class TrainResult:
    history: TrainHistory
    last_state: dict[str, np.ndarray]
    best_state: dict[str, np.ndarray]
    best_val_mpjpe: float


def evaluate(net: PoseNet, data, batch_size: int = 256,
             thresholds=None) -> MetricsReport:
    """Run the model over a dataset and aggregate all pose metrics.

    `data` is either a DatasetIndex or a (z, poses) array pair as produced by
    `csipose.dataset.materialize`.
    """
    if isinstance(data, DatasetIndex):
        zs, poses = materialize(data)
    else:
        zs, poses = data
    preds = np.empty_like(poses)
    for start in range(0, len(zs), batch_size):
        stop = min(start + batch_size, len(zs))
        preds[start:stop] = np.asarray(net.forward_batch(zs[start:stop]),
                                       dtype=np.float64)
    kwargs = {} if thresholds is None else {"thresholds": thresholds}
    return evaluate_poses(preds, poses, **kwargs)


def train(net: PoseNet, train_data, val_data, cfg: TrainConfig,
          log=None, thresholds=None) -> TrainResult:
    """Mini-batch AdamW with the cosine schedule; deterministic in cfg.seed.

    Evaluates the untrained model first (the baseline every run is compared
    against), snapshots validation metrics every `eval_every` epochs and at
    the end, and keeps the best-by-validation-MPJPE state alongside the last.
    Aborts with DivergenceError if the loss leaves the reals.
    """
    cfg.validate()
    if isinstance(train_data, DatasetIndex):
        train_data = materialize(train_data)
    if isinstance(val_data, DatasetIndex):
        val_data = materialize(val_data)
    zs, poses = train_data
    if len(zs) == 0:
        raise CsiPoseError("empty training set")

    history = TrainHistory(recipe=cfg.recipe())
    history.init_val = evaluate(net, val_data, cfg.batch_size, thresholds)
    best_state = net.state_dict()
    best_val = history.init_val.mpjpe_mm

    opt = AdamW(net.named_params().values(), cfg)
    order_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n = len(zs)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = max(cfg.epochs * steps_per_epoch, 1)
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = order_rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses = []
        lrs = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred = net.forward_batch(zs[idx])
            loss, dpred = mse_loss_grad(pred, poses[idx])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} at epoch {epoch} step {step}")
            lr = lr_at(step, total_steps, cfg)
            opt.zero_grads()
            net.backward_batch(dpred)
            opt.step(lr)
            losses.append(loss)
            lrs.append(lr)
            step += 1
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)),
                             lrs=lrs, wall_clock_s=time.perf_counter() - t0)
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            record.val = evaluate(net, val_data, cfg.batch_size, thresholds)
            if record.val.mpjpe_mm < best_val:
                best_val = record.val.mpjpe_mm
                best_state = net.state_dict()
        history.records.append(record)
        if log is not None:
            val_txt = (f" val_mpjpe={record.val.mpjpe_mm:.1f}mm"
                       if record.val else "")
            log(f"epoch {epoch + 1}/{cfg.epochs} loss={record.train_loss:.4g}{val_txt}")
    return TrainResult(history=history, last_state=net.state_dict(),
                       best_state=best_state, best_val_mpjpe=best_val)


# -- gradient audit -----------------------------------------------------------

def _rel_err(a: float, n: float) -> float:
    # Guarded relative error: gradients far below 1e-2 are compared on an
    # absolute-ish scale where finite differences stop being informative.
    return abs(a - n) / max(abs(a), abs(n), 1e-2)


def _fd_audit(params: dict, loss_fn, analytic: dict, h: float,
              sample_cap: int, rng: np.random.Generator) -> tuple[float, str]:
    worst = -1.0
    worst_name = ""
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n_entries = flat.size
        if n_entries > sample_cap:
            idx = rng.choice(n_entries, size=sample_cap, replace=False)
        else:
            idx = np.arange(n_entries)
        ana = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = _rel_err(float(ana[i]), numeric)
            if err > worst:
                worst = err
                worst_name = f"{name}[{i}]"
    return worst, worst_name


def grad_check(model_cfg: ModelConfig | None = None, seed: int = 0, *,
               kind: str = "full", h: float = 1e-5, sample_cap: int = 1000,
               batch: int = 2, corrupt_param: str | None = None,
               verbose: bool = False) -> float:
    """Audit analytic gradients against central finite differences (float64).

    kind="full" checks every parameter of the end-to-end model on the tiny
    configuration; kind="linear" checks a lone graph convolution, where the
    quadratic loss makes central differences exact up to roundoff -- a sanity
    check of the audit machinery itself. `corrupt_param` deliberately scales
    one analytic gradient so tests can confirm the audit actually detects
    broken gradients. Returns the max guarded relative error.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if kind == "linear":
        from .layers import ChebGConv
        graph = build_skeleton(5, ((0, 1), (1, 2), (2, 3), (3, 4)))
        from .skeleton import cheb_basis
        basis = [t for t in cheb_basis(graph, 2).polynomials]
        layer = ChebGConv(np.random.default_rng(seed), 2, 4, 3, True, np.float64)
        x = rng.normal(size=(batch, 5, 4))
        target = rng.normal(size=(batch, 5, 3))

        def loss_fn() -> float:
            return mse_loss(layer.forward(x, basis), target)

        layer.zero_grads()
        _, dpred = mse_loss_grad(layer.forward(x, basis), target)
        layer.backward(dpred)
        params = layer.named_params()
    else:
        cfg = model_cfg if model_cfg is not None else tiny_model_config()
        if cfg.dtype != "float64":
            cfg = replace(cfg, dtype="float64")
        graph = build_skeleton(cfg.J, tuple((i, i + 1) for i in range(cfg.J - 1))) \
            if cfg.J != 17 else build_skeleton()
        net = PoseNet(cfg, graph, seed=seed)
        z = rng.normal(size=(batch, cfg.A, cfg.S, cfg.T))
        target = rng.normal(size=(batch, cfg.J, 3)) * cfg.output_scale

        def loss_fn() -> float:
            return mse_loss(net.forward_batch(z), target)

        net.zero_grads()
        _, dpred = mse_loss_grad(net.forward_batch(z), target)
        net.backward_batch(dpred)
        params = net.named_params()

    analytic = {name: p.grad.copy() for name, p in params.items()}
    if corrupt_param is not None:
        if corrupt_param not in analytic:
            raise CsiPoseError(f"no parameter named {corrupt_param!r}")
        analytic[corrupt_param] = analytic[corrupt_param] * 3.0 + 0.05
    sample_rng = np.random.default_rng(np.random.SeedSequence(seed + 1))
    worst, worst_name = _fd_audit(params, loss_fn, analytic, h, sample_cap,
                                  sample_rng)
    if verbose:
        print(f"grad check ({kind}): max rel err {worst:.3e} at {worst_name}")
    return worst
