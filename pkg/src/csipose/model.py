"""The pose-regression network.

Pipeline: a convolutional encoder shared across antennas maps each (S, T)
CSI slice to features aligned with the joint axis, a point-wise convolution
fuses antennas down to D2 channels, a lightweight attention module reweights
the compressed time axis and then the antenna axis (softmax weights in both
cases), and a graph regression head stacks Chebyshev graph convolutions with
multi-head self-attention blocks to produce the (J, 3) pose.

Ablation variants swap the attention aggregator for global average pooling or
per-joint token attention, and the graph head for a parameter-matched MLP.

All forward passes are deterministic given the parameters (dropout is off by
default and only active when a generator is passed in).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CsiPoseError
from .layers import (AdaptiveAvgPool2d, ChebGConv, Conv2d, Dropout, Gelu,
                     GroupNorm, LayerNorm, Linear, Module,
                     MultiHeadSelfAttention, Param, kaiming_uniform, softmax,
                     softmax_backward)
from .skeleton import ChebBasis, SkeletonGraph, cheb_basis

AGGREGATORS = ("ltsa", "gap", "pj_mhsa")
HEADS = ("graph", "mlp")

MIN_S = 32
MIN_T = 4


@dataclass(frozen=True)
class ModelConfig:
    A: int = 3
    S: int = 114
    T: int = 10
    J: int = 17
    D1: int = 128          # encoder output channels
    D2: int = 64           # fused channels
    D3: int = 128          # graph latent width
    W: int = 5             # compressed temporal length
    K: int = 2             # Chebyshev order
    N: int = 4             # graph-attention blocks
    heads: int = 4
    aggregator: str = "ltsa"
    head: str = "graph"
    cheb_bias: bool = True
    dropout: float = 0.0
    output_scale: float = 1000.0  # network output units -> millimeters
    dtype: str = "float32"

    def validate(self) -> None:
        for name in ("A", "S", "T", "J", "D1", "D2", "D3", "W", "K", "N", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model config: {name} must be >= 1")
        if self.S < MIN_S or self.T < MIN_T:
            raise ConfigError(
                f"encoder needs S >= {MIN_S} and T >= {MIN_T}, got S={self.S}, T={self.T}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.head == "graph" and self.D3 % self.heads != 0:
            raise ConfigError(f"D3={self.D3} not divisible by heads={self.heads}")
        if self.aggregator == "pj_mhsa" and self.D2 % self.heads != 0:
            raise ConfigError(f"D2={self.D2} not divisible by heads={self.heads}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        if self.output_scale <= 0:
            raise ConfigError("output_scale must be positive")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


def desk_model_config(**overrides) -> ModelConfig:
    """Smaller widths for CPU-scale runs; tensor shapes stay MM-Fi-sized."""
    base = dict(D1=32, D2=32, D3=64, N=2)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model_config(**overrides) -> ModelConfig:
    """Minimal configuration used by the finite-difference gradient audit."""
    base = dict(A=2, S=32, T=4, J=5, D1=8, D2=8, D3=16, W=2, K=2, N=1,
                heads=4, output_scale=1.0, dtype="float64")
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class ActivationTrace:
    """Intermediate activations for one sample (batch axis squeezed)."""

    f_a: np.ndarray                 # (A, D1, J, W) per-antenna features
    f1: np.ndarray                  # (D2, J, A, W) fused
    alpha: np.ndarray | None        # (J, A, W) temporal weights
    f_t: np.ndarray | None          # (D2, J, A)
    beta: np.ndarray | None         # (J, A) antenna weights
    f2: np.ndarray                  # (D2, J)
    f3: np.ndarray                  # (J, D2) joint embedding
    block_states: list[np.ndarray]  # N+1 arrays (J, D3), graph head only
    y: np.ndarray                   # (J, 3) predicted pose, mm


class ResidualBlock(Module):
    def __init__(self, rng, c_in: int, c_out: int, stride, dtype):
        super().__init__()
        self.conv1 = self.add_child("conv1", Conv2d(rng, c_in, c_out, (3, 3), stride, dtype=dtype))
        self.gn1 = self.add_child("norm1", GroupNorm(c_out, dtype=dtype))
        self.act1 = self.add_child("act1", Gelu())
        self.conv2 = self.add_child("conv2", Conv2d(rng, c_out, c_out, (3, 3), (1, 1), dtype=dtype))
        self.gn2 = self.add_child("norm2", GroupNorm(c_out, dtype=dtype))
        self.project = stride != (1, 1) or c_in != c_out
        if self.project:
            self.conv_sc = self.add_child("shortcut_conv",
                                          Conv2d(rng, c_in, c_out, (1, 1), stride, dtype=dtype))
            self.gn_sc = self.add_child("shortcut_norm", GroupNorm(c_out, dtype=dtype))
        self.act_out = self.add_child("act_out", Gelu())

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.gn2.forward(self.conv2.forward(
            self.act1.forward(self.gn1.forward(self.conv1.forward(x)))))
        sc = self.gn_sc.forward(self.conv_sc.forward(x)) if self.project else x
        return self.act_out.forward(h + sc)

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = self.act_out.backward(g)
        dsc = self.conv_sc.backward(self.gn_sc.backward(g)) if self.project else g
        dh = self.conv1.backward(self.gn1.backward(self.act1.backward(
            self.conv2.backward(self.gn2.backward(g)))))
        return dh + dsc


class AntennaEncoder(Module):
    """Shared per-antenna CNN: stem conv, three residual blocks halving the
    subcarrier axis (and the time axis while it stays >= W), then adaptive
    average pooling to exactly (J, W)."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        dtype = cfg.np_dtype
        widths = (max(4, cfg.D1 // 8), max(4, cfg.D1 // 4),
                  max(4, cfg.D1 // 2), cfg.D1)
        self.stem = self.add_child("stem", Conv2d(rng, 1, widths[0], (3, 3), (1, 1), dtype=dtype))
        self.stem_norm = self.add_child("stem_norm", GroupNorm(widths[0], dtype=dtype))
        self.stem_act = self.add_child("stem_act", Gelu())
        t_cur = cfg.T
        self.blocks = []
        for i in range(3):
            t_stride = 2 if -(-t_cur // 2) >= cfg.W else 1
            t_cur = -(-t_cur // 2) if t_stride == 2 else t_cur
            blk = ResidualBlock(rng, widths[i], widths[i + 1], (2, t_stride), dtype)
            self.blocks.append(self.add_child(f"block{i + 1}", blk))
        self.pool = self.add_child("pool", AdaptiveAvgPool2d((cfg.J, cfg.W)))
        self.cfg = cfg

    def forward_images(self, x: np.ndarray) -> np.ndarray:
        """(N, 1, S, T) -> (N, D1, J, W)."""
        h = self.stem_act.forward(self.stem_norm.forward(self.stem.forward(x)))
        for blk in self.blocks:
            h = blk.forward(h)
        return self.pool.forward(h)

    def backward_images(self, g: np.ndarray) -> np.ndarray:
        g = self.pool.backward(g)
        for blk in reversed(self.blocks):
            g = blk.backward(g)
        return self.stem.backward(self.stem_norm.backward(self.stem_act.backward(g)))

    def forward(self, z: np.ndarray) -> np.ndarray:
        """(B, A, S, T) -> (B, A, D1, J, W); one weight set for all antennas."""
        b, a, s, t = z.shape
        f = self.forward_images(z.reshape(b * a, 1, s, t))
        return f.reshape(b, a, *f.shape[1:])

    def backward(self, g: np.ndarray) -> np.ndarray:
        b, a = g.shape[:2]
        dz = self.backward_images(g.reshape(b * a, *g.shape[2:]))
        return dz.reshape(b, a, *dz.shape[2:])


class AntennaFusion(Module):
    """Point-wise conv D1 -> D2 applied at every (joint, antenna, time)."""

    def __init__(self, rng, d1: int, d2: int, dtype):
        super().__init__()
        self.w = self.add_param("weight", kaiming_uniform(rng, (d2, d1), d1, dtype))
        self.b = self.add_param("bias", np.zeros(d2, dtype=dtype))

    def forward(self, stack: np.ndarray) -> np.ndarray:
        """(B, A, D1, J, W) -> (B, D2, J, A, W)."""
        moved = stack.transpose(0, 1, 3, 4, 2)             # (B, A, J, W, D1)
        self._moved = moved
        y = np.matmul(moved, self.w.data.T) + self.b.data  # (B, A, J, W, D2)
        return y.transpose(0, 4, 2, 1, 3)

    def backward(self, g: np.ndarray) -> np.ndarray:
        gt = g.transpose(0, 3, 2, 4, 1)                    # (B, A, J, W, D2)
        d2 = self.w.data.shape[0]
        d1 = self.w.data.shape[1]
        self.w.grad += gt.reshape(-1, d2).T @ self._moved.reshape(-1, d1)
        self.b.grad += g.sum(axis=(0, 2, 3, 4))
        dmoved = np.matmul(gt, self.w.data)                # (B, A, J, W, D1)
        return dmoved.transpose(0, 1, 4, 2, 3)


def _temporal_aggregate(alpha: np.ndarray, f1: np.ndarray) -> np.ndarray:
    """(B,J,A,W) weights x (B,C,J,A,W) features -> (B,C,J,A)."""
    return np.einsum("bjaw,bcjaw->bcja", alpha, f1)


def _spatial_aggregate(beta: np.ndarray, f_t: np.ndarray) -> np.ndarray:
    """(B,J,A) weights x (B,C,J,A) features -> (B,C,J)."""
    return np.einsum("bja,bcja->bcj", beta, f_t)


class _ScalarGate(Module):
    """The 1x1(x1) attention convolution: after the channel mean there is a
    single channel left, so the conv reduces to a learned scale and offset."""

    def __init__(self, dtype):
        super().__init__()
        self.w = self.add_param("weight", np.ones(1, dtype=dtype))
        self.b = self.add_param("bias", np.zeros(1, dtype=dtype))

    def forward(self, m: np.ndarray) -> np.ndarray:
        self._m = m
        return self.w.data[0] * m + self.b.data[0]

    def backward(self, g: np.ndarray) -> np.ndarray:
        self.w.grad += np.array([(g * self._m).sum()], dtype=g.dtype)
        self.b.grad += np.array([g.sum()], dtype=g.dtype)
        return self.w.data[0] * g


class LtsaAggregator(Module):
    """Temporal then antenna softmax reweighting (the lightweight module)."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        dtype = cfg.np_dtype
        self.temporal = self.add_child("temporal", _ScalarGate(dtype))
        self.spatial = self.add_child("spatial", _ScalarGate(dtype))

    def forward(self, f1: np.ndarray):
        c = f1.shape[1]
        m_t = f1.mean(axis=1)                       # (B,J,A,W)
        alpha = softmax(self.temporal.forward(m_t), axis=-1)
        f_t = _temporal_aggregate(alpha, f1)        # (B,C,J,A)
        m_s = f_t.mean(axis=1)                      # (B,J,A)
        beta = softmax(self.spatial.forward(m_s), axis=-1)
        f2 = _spatial_aggregate(beta, f_t)          # (B,C,J)
        self._cache = (f1, alpha, f_t, beta, c)
        return f2, alpha, f_t, beta

    def backward(self, g: np.ndarray) -> np.ndarray:
        f1, alpha, f_t, beta, c = self._cache
        dbeta = np.einsum("bcj,bcja->bja", g, f_t)
        df_t = beta[:, None, :, :] * g[..., None]
        dlogits_s = softmax_backward(beta, dbeta, axis=-1)
        dm_s = self.spatial.backward(dlogits_s)
        df_t += dm_s[:, None, :, :] / c
        dalpha = np.einsum("bcja,bcjaw->bjaw", df_t, f1)
        df1 = alpha[:, None] * df_t[..., None]
        dlogits_t = softmax_backward(alpha, dalpha, axis=-1)
        dm_t = self.temporal.backward(dlogits_t)
        df1 += dm_t[:, None] / c
        return df1


class GapAggregator(Module):
    """Uniform mean over time then antennas. Implemented through the same
    weighted sums as the attention module with exactly-uniform weights, so
    the two coincide bit-for-bit when the attention logits are constant."""

    def __init__(self, rng=None, cfg: ModelConfig | None = None):
        super().__init__()

    def forward(self, f1: np.ndarray):
        b, c, j, a, w = f1.shape
        alpha = np.full((b, j, a, w), 1.0 / w, dtype=f1.dtype)
        f_t = _temporal_aggregate(alpha, f1)
        beta = np.full((b, j, a), 1.0 / a, dtype=f1.dtype)
        f2 = _spatial_aggregate(beta, f_t)
        self._cache = (alpha, beta)
        return f2, alpha, f_t, beta

    def backward(self, g: np.ndarray) -> np.ndarray:
        alpha, beta = self._cache
        df_t = beta[:, None, :, :] * g[..., None]
        return alpha[:, None] * df_t[..., None]


class PjMhsaAggregator(Module):
    """Per-joint attention over the A*W antenna-time tokens followed by mean
    token pooling; one shared attention parameter set for all joints."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.attn = self.add_child(
            "attn", MultiHeadSelfAttention(rng, cfg.D2, cfg.heads, cfg.dropout,
                                           cfg.np_dtype))

    def forward(self, f1: np.ndarray, rng=None):
        b, c, j, a, w = f1.shape
        self._dims = (b, c, j, a, w)
        tokens = f1.transpose(0, 2, 3, 4, 1).reshape(b * j, a * w, c)
        y = tokens + self.attn.forward(tokens, rng)
        f2 = y.mean(axis=1).reshape(b, j, c).transpose(0, 2, 1)
        return f2, None, None, None

    def backward(self, g: np.ndarray) -> np.ndarray:
        b, c, j, a, w = self._dims
        dpooled = g.transpose(0, 2, 1).reshape(b * j, c)
        dy = np.broadcast_to(dpooled[:, None, :] / (a * w), (b * j, a * w, c)).copy()
        dtokens = dy + self.attn.backward(dy)
        return dtokens.reshape(b, j, a, w, c).transpose(0, 4, 1, 2, 3)


class JointEmbedding(Module):
    """Transpose to joint-first and LayerNorm each joint's feature vector."""

    def __init__(self, d2: int, dtype):
        super().__init__()
        self.norm = self.add_child("norm", LayerNorm(d2, dtype=dtype))

    def forward(self, f2: np.ndarray) -> np.ndarray:
        return self.norm.forward(f2.transpose(0, 2, 1))

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.norm.backward(g).transpose(0, 2, 1)


class GcnAttentionBlock(Module):
    """Pre-norm residual block: two ChebGConv+GELU sub-layers, then one
    self-attention sub-layer. Zeroing a branch's final weights makes that
    branch a no-op, so a fully zeroed block is the identity."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        dtype = cfg.np_dtype
        d3 = cfg.D3
        self.ln1 = self.add_child("norm1", LayerNorm(d3, dtype=dtype))
        self.conv1 = self.add_child("gconv1", ChebGConv(rng, cfg.K, d3, d3, cfg.cheb_bias, dtype))
        self.act1 = self.add_child("act1", Gelu())
        self.drop1 = self.add_child("drop1", Dropout(cfg.dropout))
        self.ln2 = self.add_child("norm2", LayerNorm(d3, dtype=dtype))
        self.conv2 = self.add_child("gconv2", ChebGConv(rng, cfg.K, d3, d3, cfg.cheb_bias, dtype))
        self.act2 = self.add_child("act2", Gelu())
        self.drop2 = self.add_child("drop2", Dropout(cfg.dropout))
        self.ln3 = self.add_child("norm3", LayerNorm(d3, dtype=dtype))
        self.attn = self.add_child("attn", MultiHeadSelfAttention(rng, d3, cfg.heads,
                                                                  cfg.dropout, dtype))
        self.drop3 = self.add_child("drop3", Dropout(cfg.dropout))

    def forward(self, x: np.ndarray, basis, rng=None) -> np.ndarray:
        x = x + self.drop1.forward(self.act1.forward(
            self.conv1.forward(self.ln1.forward(x), basis)), rng)
        x = x + self.drop2.forward(self.act2.forward(
            self.conv2.forward(self.ln2.forward(x), basis)), rng)
        x = x + self.drop3.forward(self.attn.forward(self.ln3.forward(x), rng), rng)
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = g + self.ln3.backward(self.attn.backward(self.drop3.backward(g)))
        g = g + self.ln2.backward(self.conv2.backward(
            self.act2.backward(self.drop2.backward(g))))
        g = g + self.ln1.backward(self.conv1.backward(
            self.act1.backward(self.drop1.backward(g))))
        return g


class GraphHead(Module):
    """Input ChebGConv D2 -> D3, N attention blocks, final ChebGConv D3 -> 3;
    2N + 2 graph convolutions in total."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.in_conv = self.add_child("in_conv",
                                      ChebGConv(rng, cfg.K, cfg.D2, cfg.D3, cfg.cheb_bias,
                                                cfg.np_dtype))
        self.blocks = [self.add_child(f"block{i}", GcnAttentionBlock(rng, cfg))
                       for i in range(cfg.N)]
        self.out_conv = self.add_child("out_conv",
                                       ChebGConv(rng, cfg.K, cfg.D3, 3, cfg.cheb_bias,
                                                 cfg.np_dtype))

    def forward(self, f3: np.ndarray, basis, rng=None, collect=None) -> np.ndarray:
        x = self.in_conv.forward(f3, basis)
        if collect is not None:
            collect.append(x)
        for blk in self.blocks:
            x = blk.forward(x, basis, rng)
            if collect is not None:
                collect.append(x)
        return self.out_conv.forward(x, basis)

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = self.out_conv.backward(g)
        for blk in reversed(self.blocks):
            g = blk.backward(g)
        return self.in_conv.backward(g)


def graph_head_param_count(cfg: ModelConfig) -> int:
    return GraphHead(np.random.default_rng(0), cfg).param_count()


def mlp_hidden_width(cfg: ModelConfig) -> int:
    """Hidden width that matches the graph head's parameter count (the MLP
    ablation compares structure, not capacity)."""
    target = graph_head_param_count(cfg)
    d_in = cfg.J * cfg.D2
    d_out = cfg.J * 3
    return max(1, int(round((target - d_out) / (d_in + 1 + d_out))))


class MlpHead(Module):
    """Flatten-joint MLP baseline with one GELU hidden layer."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.hidden = mlp_hidden_width(cfg)
        dtype = cfg.np_dtype
        self.lin1 = self.add_child("lin1", Linear(rng, cfg.J * cfg.D2, self.hidden, dtype))
        self.act = self.add_child("act", Gelu())
        self.lin2 = self.add_child("lin2", Linear(rng, self.hidden, cfg.J * 3, dtype))

    def forward(self, f3: np.ndarray, basis=None, rng=None, collect=None) -> np.ndarray:
        b = f3.shape[0]
        self._in_shape = f3.shape
        flat = f3.reshape(b, -1)
        return self.lin2.forward(self.act.forward(self.lin1.forward(flat))).reshape(b, -1, 3)

    def backward(self, g: np.ndarray) -> np.ndarray:
        b = g.shape[0]
        dflat = self.lin1.backward(self.act.backward(self.lin2.backward(g.reshape(b, -1))))
        return dflat.reshape(self._in_shape)


class PoseNet(Module):
    """End-to-end network; see the module docstring for the layout.

    Parameter names are dotted module paths (`encoder.block1.conv1.weight`,
    `fuse.bias`, `aggregator.temporal.weight`, `embed.norm.gain`,
    `head.block0.attn.query.weight`, ...); checkpoints store them sorted by
    name as little-endian float32.
    """

    def __init__(self, cfg: ModelConfig, graph: SkeletonGraph, seed: int = 0):
        super().__init__()
        cfg.validate()
        if graph.n_joints != cfg.J:
            raise ConfigError(
                f"graph has {graph.n_joints} joints but config J={cfg.J}")
        self.cfg = cfg
        self.graph = graph
        self.seed = seed
        dtype = cfg.np_dtype
        self.basis = [t.astype(dtype) for t in cheb_basis(graph, cfg.K).polynomials]
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.encoder = self.add_child("encoder", AntennaEncoder(rng, cfg))
        self.fuse = self.add_child("fuse", AntennaFusion(rng, cfg.D1, cfg.D2, dtype))
        if cfg.aggregator == "ltsa":
            self.aggregator = self.add_child("aggregator", LtsaAggregator(rng, cfg))
        elif cfg.aggregator == "gap":
            self.aggregator = self.add_child("aggregator", GapAggregator(rng, cfg))
        else:
            self.aggregator = self.add_child("aggregator", PjMhsaAggregator(rng, cfg))
        self.embed = self.add_child("embed", JointEmbedding(cfg.D2, dtype))
        if cfg.head == "graph":
            self.head = self.add_child("head", GraphHead(rng, cfg))
        else:
            self.head = self.add_child("head", MlpHead(rng, cfg))

    # -- batched paths -----------------------------------------------------

    def forward_batch(self, z: np.ndarray, rng: np.random.Generator | None = None,
                      collect_blocks: list | None = None):
        z = np.asarray(z, dtype=self.cfg.np_dtype)
        if z.ndim != 4 or z.shape[1:] != (self.cfg.A, self.cfg.S, self.cfg.T):
            raise CsiPoseError(
                f"expected input (B, {self.cfg.A}, {self.cfg.S}, {self.cfg.T}), got {z.shape}")
        f_a = self.encoder.forward(z)
        f1 = self.fuse.forward(f_a)
        if isinstance(self.aggregator, PjMhsaAggregator):
            f2, alpha, f_t, beta = self.aggregator.forward(f1, rng)
        else:
            f2, alpha, f_t, beta = self.aggregator.forward(f1)
        f3 = self.embed.forward(f2)
        y = self.head.forward(f3, self.basis, rng, collect_blocks)
        self._last = (f_a, f1, alpha, f_t, beta, f2, f3)
        return y * self.cfg.output_scale

    def backward_batch(self, dy: np.ndarray) -> np.ndarray:
        g = np.asarray(dy, dtype=self.cfg.np_dtype) * self.cfg.output_scale
        g = self.head.backward(g)
        g = self.embed.backward(g)
        g = self.aggregator.backward(g)
        g = self.fuse.backward(g)
        return self.encoder.backward(g)

    # -- per-sample spec surface --------------------------------------------

    def forward(self, z: np.ndarray) -> np.ndarray:
        """(A, S, T) -> (J, 3) pose in millimeters."""
        return self.forward_batch(np.asarray(z)[None])[0]

    def trace(self, z: np.ndarray) -> ActivationTrace:
        blocks: list = []
        y = self.forward_batch(np.asarray(z)[None], collect_blocks=blocks)
        f_a, f1, alpha, f_t, beta, f2, f3 = self._last
        squeeze = lambda arr: None if arr is None else arr[0]
        return ActivationTrace(
            f_a=squeeze(f_a), f1=squeeze(f1), alpha=squeeze(alpha),
            f_t=squeeze(f_t), beta=squeeze(beta), f2=squeeze(f2),
            f3=squeeze(f3), block_states=[b[0] for b in blocks], y=y[0])

    def encode_antenna(self, z_a: np.ndarray) -> np.ndarray:
        """(S, T) -> (D1, J, W) through the shared encoder."""
        z_a = np.asarray(z_a, dtype=self.cfg.np_dtype)
        return self.encoder.forward_images(z_a[None, None])[0]

    def fuse_antennas(self, stack: np.ndarray) -> np.ndarray:
        """(A, D1, J, W) -> (D2, J, A, W)."""
        return self.fuse.forward(np.asarray(stack, dtype=self.cfg.np_dtype)[None])[0]

    def regress_pose(self, f3: np.ndarray) -> np.ndarray:
        """(J, D2) joint embedding -> (J, 3) pose in millimeters."""
        f3 = np.asarray(f3, dtype=self.cfg.np_dtype)
        return self.head.forward(f3[None], self.basis)[0] * self.cfg.output_scale

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise CsiPoseError(
                f"checkpoint does not match model (missing {sorted(missing)[:3]}, "
                f"extra {sorted(extra)[:3]})")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise CsiPoseError(
                    f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr


# -- functional spec surface -------------------------------------------------

def cheb_gconv(x: np.ndarray, basis, thetas, bias=None) -> np.ndarray:
    """Pure-function graph convolution: sum_k T_k X Theta_k (+ bias).

    `basis` is a ChebBasis or a list of (J, J) arrays; `thetas` is a list of
    (C_in, C_out) arrays, one per basis matrix.
    """
    mats = basis.polynomials if isinstance(basis, ChebBasis) else basis
    if len(mats) != len(thetas):
        raise CsiPoseError(f"{len(mats)} basis matrices but {len(thetas)} weights")
    x = np.asarray(x)
    single = x.ndim == 2
    xb = x[None] if single else x
    y = None
    for t, theta in zip(mats, thetas):
        term = np.einsum("ij,bjc,co->bio", t, xb, theta)
        y = term if y is None else y + term
    if bias is not None:
        y = y + bias
    return y[0] if single else y


def mhsa(x: np.ndarray, attn: MultiHeadSelfAttention) -> np.ndarray:
    """Self-attention over joints with the residual connection added."""
    x = np.asarray(x)
    single = x.ndim == 2
    xb = x[None] if single else x
    y = xb + attn.forward(xb)
    return y[0] if single else y


def aggregate_gap(f1: np.ndarray) -> np.ndarray:
    """(D2, J, A, W) or batched -> uniform mean over W then A."""
    f1 = np.asarray(f1)
    single = f1.ndim == 4
    fb = f1[None] if single else f1
    f2, _, _, _ = GapAggregator().forward(fb)
    return f2[0] if single else f2


def param_count(params) -> int:
    """Total scalars across a parameter registry (dict or Module)."""
    if isinstance(params, Module):
        params = params.named_params()
    return int(sum(int(np.asarray(p.data if isinstance(p, Param) else p).size)
                   for p in params.values()))


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"GPFC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray], digest: str) -> None:
    """Write named tensors as little-endian float32 under a digest header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest_b = digest.encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<H", len(digest_b)))
        fh.write(digest_b)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f4")
            name_b = name.encode()
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CsiPoseError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CsiPoseError(f"{path}: unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<H", fh.read(2))
        digest = fh.read(dlen).decode()
        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            state[name] = data.copy()
    return digest, state


def model_digest(model_cfg: ModelConfig, edges) -> str:
    """Architecture digest: model config plus the skeleton edge list."""
    doc = {"model": model_cfg.to_dict(), "skeleton": [list(e) for e in edges]}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
