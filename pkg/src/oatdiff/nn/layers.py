"""Parameterised layers built on :mod:`oatdiff.nn.tensor`."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal container: parameters are Tensor attributes with requires_grad."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> Tensor:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-lim, lim, size=shape).astype(dtype))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float64, bias: bool = True, zero: bool = False):
        if zero:
            self.weight = param(np.zeros((n_out, n_in), dtype=dtype))
        else:
            self.weight = glorot(rng, (n_out, n_in), n_in, n_out, dtype)
        self.bias = param(np.zeros(n_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng, stride: int = 1, padding: int | None = None,
                 dtype=np.float64, zero: bool = False):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        shape = (c_out, c_in, k, k)
        if zero:
            self.weight = param(np.zeros(shape, dtype=dtype))
        else:
            self.weight = glorot(rng, shape, c_in * k * k, c_out * k * k, dtype)
        self.bias = param(np.zeros(c_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, dtype=np.float64, eps: float = 1e-5):
        if channels % groups:
            raise ValueError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        self.eps = eps
        self.weight = param(np.ones(channels, dtype=dtype))
        self.bias = param(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.weight, self.bias, self.eps)


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding; emb[2i] = sin(t / 10000**(2i/dim)), emb[2i+1] = cos(...).

    ``t`` may be a scalar (returns shape (dim,)) or a 1-D array (returns (len(t), dim)).
    """
    if dim % 2:
        raise ValueError("time embedding dimension must be even")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("time step must be nonnegative")
    freqs = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    ang = t_arr[..., None] * freqs
    emb = np.empty(ang.shape[:-1] + (dim,))
    emb[..., 0::2] = np.sin(ang)
    emb[..., 1::2] = np.cos(ang)
    return emb


def attention_weights(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """softmax(q k^T / sqrt(d)) with max subtraction; plain numpy helper for inspection."""
    s = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


class CrossAttention(Module):
    """Multi-head attention of query tokens over conditioning tokens, residual-added.

    x: (B, n, d_model), cond: (B, m, d_cond) -> (B, n, d_model)
    """

    def __init__(self, d_model: int, d_cond: int, heads: int, rng, dtype=np.float64):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} not divisible by heads={heads}")
        self.heads = heads
        self.q = Linear(d_model, d_model, rng, dtype)
        self.k = Linear(d_cond, d_model, rng, dtype)
        self.v = Linear(d_cond, d_model, rng, dtype)
        self.out = Linear(d_model, d_model, rng, dtype)

    def _split(self, t: Tensor) -> Tensor:
        b, n, d = t.shape
        h = self.heads
        return t.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, cond: Tensor, query_pos: np.ndarray | None = None) -> Tensor:
        b, n, d = x.shape
        q_in = x if query_pos is None else x + Tensor(np.asarray(query_pos, dtype=x.dtype))
        q = self._split(self.q(q_in))
        k = self._split(self.k(cond))
        v = self._split(self.v(cond))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d // self.heads))
        attn = T.softmax(scores, axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return x + self.out(ctx)


def cross_attention(x: Tensor, cond: Tensor, layer: CrossAttention, query_pos=None) -> Tensor:
    return layer(x, cond, query_pos)


def grid_position_code(h: int, w: int, ch: int) -> np.ndarray:
    """Fixed (h*w, ch) sinusoidal code of row/column index; zeros when ch < 4."""
    code = np.zeros((h, w, ch))
    nf = ch // 4
    for k in range(nf):
        fy = np.pi * (k + 1) / h
        fx = np.pi * (k + 1) / w
        iy = np.arange(h)[:, None]
        ix = np.arange(w)[None, :]
        code[:, :, 4 * k] = np.sin(fy * (iy + 0.5))
        code[:, :, 4 * k + 1] = np.cos(fy * (iy + 0.5))
        code[:, :, 4 * k + 2] = np.sin(fx * (ix + 0.5))
        code[:, :, 4 * k + 3] = np.cos(fx * (ix + 0.5))
    return code.reshape(h * w, ch)
