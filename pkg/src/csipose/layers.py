"""Neural-network building blocks on plain numpy arrays.

Every layer implements `forward` and a matching `backward` that consumes the
upstream gradient, accumulates parameter gradients, and returns the gradient
with respect to its input. Caches for the backward pass live on the layer
instance, so one layer instance handles one in-flight forward at a time
(training is single-writer; concurrent inference should use `grads=False`
paths or separate model instances).

The backward passes are hand-derived; `csipose.training.grad_check` audits
all of them against central finite differences.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
_NORM_EPS = 1e-5


class Param:
    """A named learnable tensor with an accumulated gradient."""

    __slots__ = ("name", "data", "grad", "decay")

    def __init__(self, name: str, data: np.ndarray, decay: bool = True):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)
        self.decay = decay

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class Module:
    """Minimal parameter/children registry."""

    def __init__(self):
        self._params: list[Param] = []
        self._children: list[tuple[str, "Module"]] = []

    def add_param(self, name: str, data: np.ndarray, decay: bool = True) -> Param:
        p = Param(name, data, decay)
        self._params.append(p)
        return p

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children.append((name, child))
        return child

    def named_params(self, prefix: str = "") -> dict[str, Param]:
        out: dict[str, Param] = {}
        for p in self._params:
            out[prefix + p.name] = p
        for name, child in self._children:
            out.update(child.named_params(prefix + name + "."))
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def zero_grads(self) -> None:
        for p in self.named_params().values():
            p.zero_grad()


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return cdf + x * pdf


class Gelu(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        self._x = x
        self._cdf = cdf
        return x * cdf

    def backward(self, g: np.ndarray) -> np.ndarray:
        x = self._x
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return g * (self._cdf + x * pdf)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, g: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, dtype=np.float32):
        super().__init__()
        self.w = self.add_param("weight", kaiming_uniform(rng, (d_in, d_out), d_in, dtype))
        self.b = self.add_param("bias", np.zeros(d_out, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.data + self.b.data

    def backward(self, g: np.ndarray) -> np.ndarray:
        x2 = self._x.reshape(-1, self.w.data.shape[0])
        g2 = g.reshape(-1, self.w.data.shape[1])
        self.w.grad += x2.T @ g2
        self.b.grad += g2.sum(axis=0)
        return g @ self.w.data.T


class Conv2d(Module):
    """2-D convolution via im2col. Same-padding for odd kernels; arbitrary
    per-axis strides."""

    def __init__(self, rng, c_in: int, c_out: int, kernel=(3, 3),
                 stride=(1, 1), bias: bool = False, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.pad = (self.kernel[0] // 2, self.kernel[1] // 2)
        fan_in = c_in * self.kernel[0] * self.kernel[1]
        self.w = self.add_param(
            "weight", kaiming_uniform(rng, (c_out, c_in) + self.kernel, fan_in, dtype))
        self.b = self.add_param("bias", np.zeros(c_out, dtype=dtype)) if bias else None

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.pad
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.pad
        ho, wo = self.out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, ::sh, ::sw]                      # (B, C, Ho, Wo, kh, kw)
        cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, ho * wo)
        self._cache = (x.shape, cols)
        wf = self.w.data.reshape(self.c_out, -1)
        y = np.matmul(wf, cols).reshape(b, self.c_out, ho, wo)
        if self.b is not None:
            y += self.b.data[None, :, None, None]
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        (xb, xc, xh, xw), cols = self._cache
        b, _, ho, wo = g.shape
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.pad
        gf = g.reshape(b, self.c_out, ho * wo)
        self.w.grad += np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0) \
            .reshape(self.w.data.shape)
        if self.b is not None:
            self.b.grad += gf.sum(axis=(0, 2))
        wf = self.w.data.reshape(self.c_out, -1)
        dcols = np.matmul(wf.T, gf).reshape(b, xc, kh, kw, ho, wo)
        dxp = np.zeros((xb, xc, xh + 2 * ph, xw + 2 * pw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcols[:, :, i, j]
        return dxp[:, :, ph:ph + xh, pw:pw + xw]


def _group_count(channels: int, max_groups: int = 8) -> int:
    for g in range(min(max_groups, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class GroupNorm(Module):
    """Batch-independent normalization over channel groups; keeps forward
    evaluation a pure per-sample function, unlike batch statistics."""

    def __init__(self, channels: int, groups: int | None = None, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.groups = groups if groups is not None else _group_count(channels)
        self.gamma = self.add_param("gain", np.ones(channels, dtype=dtype), decay=False)
        self.beta = self.add_param("bias", np.zeros(channels, dtype=dtype), decay=False)

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        xg = x.reshape(b, self.groups, -1)
        mu = xg.mean(axis=-1, keepdims=True)
        var = xg.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + _NORM_EPS)
        xhat = (xg - mu) * inv
        self._cache = (xhat, inv, x.shape)
        y = xhat.reshape(x.shape)
        return y * self.gamma.data[None, :, None, None] + self.beta.data[None, :, None, None]

    def backward(self, g: np.ndarray) -> np.ndarray:
        xhat, inv, shape = self._cache
        b, c, h, w = shape
        xhat_full = xhat.reshape(shape)
        self.gamma.grad += (g * xhat_full).sum(axis=(0, 2, 3))
        self.beta.grad += g.sum(axis=(0, 2, 3))
        gh = (g * self.gamma.data[None, :, None, None]).reshape(b, self.groups, -1)
        dxg = inv * (gh - gh.mean(axis=-1, keepdims=True)
                     - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return dxg.reshape(shape)


class LayerNorm(Module):
    """Normalization over the last axis with learned gain/bias (eps 1e-5)."""

    def __init__(self, dim: int, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.gamma = self.add_param("gain", np.ones(dim, dtype=dtype), decay=False)
        self.beta = self.add_param("bias", np.zeros(dim, dtype=dtype), decay=False)

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + _NORM_EPS)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.gamma.data + self.beta.data

    def backward(self, g: np.ndarray) -> np.ndarray:
        xhat, inv = self._cache
        self.gamma.grad += (g * xhat).reshape(-1, self.dim).sum(axis=0)
        self.beta.grad += g.reshape(-1, self.dim).sum(axis=0)
        gh = g * self.gamma.data
        return inv * (gh - gh.mean(axis=-1, keepdims=True)
                      - xhat * (gh * xhat).mean(axis=-1, keepdims=True))


class AdaptiveAvgPool2d(Module):
    """Average pooling to a fixed output size; bin edges follow
    floor(i*In/Out) .. ceil((i+1)*In/Out), so outputs larger than the input
    reuse overlapping bins."""

    def __init__(self, out_hw: tuple[int, int]):
        super().__init__()
        self.out_hw = out_hw

    @staticmethod
    def _bins(n_in: int, n_out: int) -> list[tuple[int, int]]:
        return [(int(np.floor(i * n_in / n_out)),
                 int(np.ceil((i + 1) * n_in / n_out))) for i in range(n_out)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        ho, wo = self.out_hw
        hb, wb = self._bins(h, ho), self._bins(w, wo)
        self._cache = (x.shape, hb, wb)
        y = np.empty((b, c, ho, wo), dtype=x.dtype)
        for i, (hs, he) in enumerate(hb):
            for j, (ws, we) in enumerate(wb):
                y[:, :, i, j] = x[:, :, hs:he, ws:we].mean(axis=(2, 3))
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        shape, hb, wb = self._cache
        dx = np.zeros(shape, dtype=g.dtype)
        for i, (hs, he) in enumerate(hb):
            for j, (ws, we) in enumerate(wb):
                area = (he - hs) * (we - ws)
                dx[:, :, hs:he, ws:we] += g[:, :, i, j][:, :, None, None] / area
        return dx


class Dropout(Module):
    """Inverted dropout. Active only when a generator is supplied to forward;
    without one the layer is the identity (deterministic inference)."""

    def __init__(self, rate: float = 0.0):
        super().__init__()
        self.rate = rate
        self._mask = None

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None or self.rate <= 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return g
        return g * self._mask


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over a token axis, no positional
    encoding. `forward` returns the attention output only; callers add the
    residual connection."""

    def __init__(self, rng, dim: int, heads: int, dropout: float = 0.0,
                 dtype=np.float32):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"attention width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.d_head = dim // heads
        self.scale = 1.0 / np.sqrt(self.d_head)
        self.wq = self.add_child("query", Linear(rng, dim, dim, dtype))
        self.wk = self.add_child("key", Linear(rng, dim, dim, dtype))
        self.wv = self.add_child("value", Linear(rng, dim, dim, dtype))
        self.wo = self.add_child("out", Linear(rng, dim, dim, dtype))
        self.attn_drop = self.add_child("attn_drop", Dropout(dropout))

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b, h, n, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None,
                return_attention: bool = False):
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        scores = np.matmul(q, k.swapaxes(-1, -2)) * self.scale
        attn = softmax(scores, axis=-1)
        attn_d = self.attn_drop.forward(attn, rng)
        ctx = np.matmul(attn_d, v)
        self._cache = (q, k, v, attn, attn_d)
        out = self.wo.forward(self._merge(ctx))
        if return_attention:
            return out, attn
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        q, k, v, attn, attn_d = self._cache
        d_ctx = self._split(self.wo.backward(g))
        d_attn_d = np.matmul(d_ctx, v.swapaxes(-1, -2))
        dv = np.matmul(attn_d.swapaxes(-1, -2), d_ctx)
        d_attn = self.attn_drop.backward(d_attn_d)
        d_scores = softmax_backward(attn, d_attn, axis=-1) * self.scale
        dq = np.matmul(d_scores, k)
        dk = np.matmul(d_scores.swapaxes(-1, -2), q)
        dx = self.wq.backward(self._merge(dq))
        dx += self.wk.backward(self._merge(dk))
        dx += self.wv.backward(self._merge(dv))
        return dx


class ChebGConv(Module):
    """Graph convolution as a sum over Chebyshev basis matrices:
    out = sum_k T_k X Theta_k (+ bias). The basis is supplied at call time so
    one layer can be evaluated under conjugated or re-ordered graphs."""

    def __init__(self, rng, order: int, c_in: int, c_out: int,
                 bias: bool = True, dtype=np.float32):
        super().__init__()
        self.order = order
        self.thetas = [self.add_param(f"theta{k}",
                                      kaiming_uniform(rng, (c_in, c_out), c_in * order, dtype))
                       for k in range(order)]
        self.b = self.add_param("bias", np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x: np.ndarray, basis) -> np.ndarray:
        if len(basis) != self.order:
            raise ValueError(f"basis order {len(basis)} != layer order {self.order}")
        xk = [np.matmul(t, x) for t in basis]
        self._cache = (xk, basis)
        y = np.matmul(xk[0], self.thetas[0].data)
        for k in range(1, self.order):
            y += np.matmul(xk[k], self.thetas[k].data)
        if self.b is not None:
            y += self.b.data
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        xk, basis = self._cache
        dx = None
        for k in range(self.order):
            self.thetas[k].grad += np.matmul(xk[k].swapaxes(-1, -2), g).sum(axis=0)
            dxk = np.matmul(g, self.thetas[k].data.T)
            contrib = np.matmul(basis[k].T, dxk)
            dx = contrib if dx is None else dx + contrib
        if self.b is not None:
            self.b.grad += g.sum(axis=(0, 1))
        return dx
