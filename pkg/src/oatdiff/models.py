"""Conditional U-Net noise predictor and the baseline regression U-Net."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn.layers import Conv2d, CrossAttention, GroupNorm, Linear, Module, grid_position_code, time_embedding
from .nn.tensor import Tensor, concat, silu, upsample2x


@dataclass(frozen=True)
class DenoiserConfig:
    patch_size: int = 64
    base_channels: int = 32
    n_scales: int = 3
    resnet_blocks_per_scale: int = 2
    attention_heads: int = 4
    cond_tokens: int = 16
    cond_dim: int = 64
    time_embed_dim: int = 128
    norm_groups: int = 8
    # learned per-step gain on an x_t -> output shortcut, zero at init
    input_skip: bool = True
    # fixed row/column code added to attention queries
    query_position: bool = True

    def channels(self, scale: int) -> int:
        return self.base_channels * 2 ** scale

    def validate(self) -> None:
        if min(self.patch_size, self.base_channels, self.n_scales, self.resnet_blocks_per_scale,
               self.attention_heads, self.cond_tokens, self.cond_dim, self.time_embed_dim) < 1:
            raise ValueError("denoiser config values must be positive")
        if self.patch_size % 2 ** (self.n_scales - 1):
            raise ValueError("patch_size must be divisible by 2**(n_scales-1)")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        for s in range(self.n_scales):
            if self.channels(s) % self.attention_heads:
                raise ValueError(f"channels at scale {s} not divisible by attention_heads")

    @property
    def cond_length(self) -> int:
        return self.cond_tokens * self.cond_dim


def _groups(cfg: DenoiserConfig, ch: int) -> int:
    return math.gcd(cfg.norm_groups, ch)


class ResBlock(Module):
    """GroupNorm-SiLU-conv twice, optional per-channel time shift, 1x1 skip when widths differ."""

    def __init__(self, c_in: int, c_out: int, cfg: DenoiserConfig, rng, dtype, temb_dim: int | None):
        self.norm1 = GroupNorm(_groups(cfg, c_in), c_in, dtype)
        self.conv1 = Conv2d(c_in, c_out, 3, rng, dtype=dtype)
        self.temb = Linear(temb_dim, c_out, rng, dtype) if temb_dim else None
        self.norm2 = GroupNorm(_groups(cfg, c_out), c_out, dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, dtype=dtype)
        self.skip = Conv2d(c_in, c_out, 1, rng, dtype=dtype) if c_in != c_out else None

    def forward(self, x: Tensor, temb: Tensor | None = None) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        if self.temb is not None:
            e = self.temb(silu(temb))
            h = h + e.reshape(e.shape[0], e.shape[1], 1, 1)
        h = self.conv2(silu(self.norm2(h)))
        return (self.skip(x) if self.skip is not None else x) + h


class SpatialCrossAttention(Module):
    """Feature-map positions attend to conditioning tokens."""

    def __init__(self, ch: int, cfg: DenoiserConfig, rng, dtype):
        self.attn = CrossAttention(ch, cfg.cond_dim, cfg.attention_heads, rng, dtype)
        self.use_pos = cfg.query_position

    def forward(self, h: Tensor, cond_tokens: Tensor) -> Tensor:
        b, c, hh, ww = h.shape
        tokens = h.reshape(b, c, hh * ww).transpose(0, 2, 1)
        pos = grid_position_code(hh, ww, c) if self.use_pos else None
        out = self.attn(tokens, cond_tokens, pos)
        return out.transpose(0, 2, 1).reshape(b, c, hh, ww)


class _UNetBody(Module):
    def __init__(self, cfg: DenoiserConfig, rng, dtype, temb_dim, attention: bool):
        S, B = cfg.n_scales, cfg.resnet_blocks_per_scale
        self.cfg = cfg
        self.conv_in = Conv2d(1, cfg.channels(0), 3, rng, dtype=dtype)
        self.enc_blocks, self.enc_attn, self.down = [], [], []
        ch = cfg.channels(0)
        for s in range(S):
            out = cfg.channels(s)
            blocks = []
            for _ in range(B):
                blocks.append(ResBlock(ch, out, cfg, rng, dtype, temb_dim))
                ch = out
            self.enc_blocks.append(_Seq(blocks))
            if attention:
                self.enc_attn.append(SpatialCrossAttention(out, cfg, rng, dtype))
            if s < S - 1:
                self.down.append(Conv2d(out, out, 3, rng, stride=2, dtype=dtype))
        self.dec_blocks, self.dec_attn = [], []
        for s in reversed(range(S)):
            out = cfg.channels(s)
            c_in = out if s == S - 1 else cfg.channels(s + 1) + out
            blocks = []
            for _ in range(B):
                blocks.append(ResBlock(c_in, out, cfg, rng, dtype, temb_dim))
                c_in = out
            self.dec_blocks.append(_Seq(blocks))
            if attention:
                self.dec_attn.append(SpatialCrossAttention(out, cfg, rng, dtype))
        c0 = cfg.channels(0)
        self.norm_out = GroupNorm(_groups(cfg, c0), c0, dtype)
        self.conv_out = Conv2d(c0, 1, 3, rng, dtype=dtype, zero=True)

    def run(self, x: Tensor, temb, cond_tokens) -> Tensor:
        S = self.cfg.n_scales
        h = self.conv_in(x)
        skips = []
        for s in range(S):
            h = self.enc_blocks[s](h, temb)
            if self.enc_attn:
                h = self.enc_attn[s](h, cond_tokens)
            skips.append(h)
            if s < S - 1:
                h = self.down[s](h)
        for i, s in enumerate(reversed(range(S))):
            if s < S - 1:
                h = concat([upsample2x(h), skips[s]], axis=1)
            h = self.dec_blocks[i](h, temb)
            if self.dec_attn:
                h = self.dec_attn[i](h, cond_tokens)
            assert h.shape[-1] == skips[s].shape[-1]
        return self.conv_out(silu(self.norm_out(h)))


class _Seq(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def forward(self, h, temb):
        for blk in self.blocks:
            h = blk(h, temb)
        return h


def _as_input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    return Tensor(x)


class Denoiser(Module):
    """eps_theta(x_t, cond, t): (B, 1, P, P) noisy patches -> predicted noise."""

    def __init__(self, cfg: DenoiserConfig, rng=None, dtype=np.float64):
        cfg.validate()
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        E = cfg.time_embed_dim
        self.time1 = Linear(E, E, rng, dtype)
        self.time2 = Linear(E, E, rng, dtype)
        self.body = _UNetBody(cfg, rng, dtype, E, attention=True)
        self.skip_gain = Linear(E, 1, rng, dtype, zero=True) if cfg.input_skip else None

    def forward(self, x_t, cond, t) -> Tensor:
        x = _as_input(x_t, self.dtype)
        b = x.shape[0]
        P = self.cfg.patch_size
        if x.shape[1:] != (1, P, P):
            raise ValueError(f"expected (B, 1, {P}, {P}) input, got {x.shape}")
        if not isinstance(cond, Tensor):
            cond = Tensor(np.asarray(cond, dtype=self.dtype).reshape(b, -1))
        if cond.shape != (b, self.cfg.cond_length):
            raise ValueError(f"expected conditioning of shape {(b, self.cfg.cond_length)}, got {cond.shape}")
        tokens = cond.reshape(b, self.cfg.cond_tokens, self.cfg.cond_dim)
        t = np.broadcast_to(np.asarray(t), (b,))
        emb = Tensor(time_embedding(t, self.cfg.time_embed_dim).astype(self.dtype))
        temb = self.time2(silu(self.time1(emb)))
        out = self.body.run(x, temb, tokens)
        if self.skip_gain is not None:
            g = self.skip_gain(temb)
            out = out + g.reshape(b, 1, 1, 1) * x
        return out


def build_denoiser(cfg: DenoiserConfig, seed: int = 0, dtype=np.float64) -> Denoiser:
    return Denoiser(cfg, np.random.default_rng(seed), dtype)


def denoise(model: Denoiser, x_t, cond, t) -> np.ndarray:
    """Forward pass returning a plain array shaped like ``x_t``."""
    x_t = np.asarray(x_t)
    out = model(x_t, cond, t).data
    return out.reshape(x_t.shape)


class BaselineUNet(Module):
    """Same U-Net skeleton, no time embedding or attention: DAS image -> enhanced image."""

    def __init__(self, cfg: DenoiserConfig, rng=None, dtype=np.float64):
        cfg.validate()
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.body = _UNetBody(cfg, rng, dtype, None, attention=False)

    def forward(self, x) -> Tensor:
        x = _as_input(x, self.dtype)
        if x.shape[-1] % 2 ** (self.cfg.n_scales - 1):
            raise ValueError("input size not divisible by 2**(n_scales-1)")
        return self.body.run(x, None, None)


def build_baseline_unet(cfg: DenoiserConfig, seed: int = 0, dtype=np.float64) -> BaselineUNet:
    return BaselineUNet(cfg, np.random.default_rng(seed), dtype)
