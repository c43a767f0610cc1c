"""Conditional-information preprocessing: a dense autoencoder over DAS subpatches.

The encoder turns each flattened subpatch into a nonnegative latent; the four
latents of a patch are concatenated into its conditioning vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.layers import Linear, Module
from .nn.optim import ParamStore, adam_step
from .nn.tensor import Tensor, mse_loss, relu
from .patching import split_subpatches_flat


@dataclass(frozen=True)
class CipConfig:
    input_dim: int = 1024
    hidden: tuple[int, ...] = (768, 512, 256)

    @property
    def latent_dim(self) -> int:
        return self.hidden[-1]

    @property
    def cond_dim(self) -> int:
        return 4 * self.latent_dim


class CipEncoder(Module):
    def __init__(self, cfg: CipConfig, rng, dtype=np.float64):
        self.cfg = cfg
        dims = (cfg.input_dim,) + tuple(cfg.hidden)
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, v: Tensor) -> Tensor:
        h = v
        for lin in self.layers:
            h = relu(lin(h))
        return h


class CipDecoder(Module):
    def __init__(self, cfg: CipConfig, rng, dtype=np.float64):
        dims = tuple(reversed(cfg.hidden)) + (cfg.input_dim,)
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, z: Tensor) -> Tensor:
        h = z
        for i, lin in enumerate(self.layers):
            h = lin(h)
            if i < len(self.layers) - 1:
                h = relu(h)
        return h


def _as_tensor(v, dtype) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=dtype))


def encode_subpatch(encoder: CipEncoder, v) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != encoder.cfg.input_dim:
        raise ValueError(f"expected input length {encoder.cfg.input_dim}, got {v.shape[-1]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite subpatch values")
    return encoder(_as_tensor(v, encoder.layers[0].weight.dtype)).data


def condition_inputs(das_patches: np.ndarray) -> np.ndarray:
    """(B, P, P) patches -> (B, 4, (P/2)**2) flattened subpatches in quadrant order."""
    das_patches = np.asarray(das_patches)
    if das_patches.ndim == 2:
        das_patches = das_patches[None]
    return np.stack([np.stack(split_subpatches_flat(p)) for p in das_patches])


def build_condition(encoder: CipEncoder, das_patch: np.ndarray) -> np.ndarray:
    """Conditioning vector of one patch (or a batch of patches)."""
    das_patch = np.asarray(das_patch)
    single = das_patch.ndim == 2
    subs = condition_inputs(das_patch)
    side = int(round(np.sqrt(encoder.cfg.input_dim))) * 2
    if das_patch.shape[-2:] != (side, side):
        raise ValueError(f"expected {side}x{side} patches, got {das_patch.shape[-2:]}")
    z = encode_subpatch(encoder, subs)  # (B, 4, latent)
    out = z.reshape(z.shape[0], -1)
    return out[0] if single else out


def encode_condition_tensor(encoder: CipEncoder, das_patches: np.ndarray) -> Tensor:
    """Differentiable variant of :func:`build_condition` for joint fine-tuning."""
    subs = condition_inputs(das_patches)
    z = encoder(Tensor(subs.astype(encoder.layers[0].weight.dtype)))
    return z.reshape(z.shape[0], -1)


def train_cip(subpatches: np.ndarray, cfg: CipConfig, *, steps: int | None = None, epochs: int = 1,
              lr: float = 1e-3, batch: int = 64, seed: int = 0, dtype=np.float64,
              beta1: float = 0.9, beta2: float = 0.999):
    """ADAM on MSE(decode(encode(v)), v). Returns (encoder, per-step losses).

    ``steps`` overrides ``epochs`` when given. The decoder is discarded.
    """
    data = np.asarray(subpatches, dtype=dtype).reshape(-1, cfg.input_dim)
    if len(data) == 0:
        raise ValueError("empty CIP training set")
    rng = np.random.default_rng(seed)
    enc = CipEncoder(cfg, rng, dtype)
    dec = CipDecoder(cfg, rng, dtype)
    store = ParamStore(list(enc.named_parameters("cip.enc.")) + list(dec.named_parameters("cip.dec.")))
    batch = min(batch, len(data))
    per_epoch = max(1, len(data) // batch)
    total = steps if steps is not None else epochs * per_epoch
    losses = []
    order = rng.permutation(len(data))
    pos = 0
    for _ in range(total):
        if pos + batch > len(data):
            order = rng.permutation(len(data))
            pos = 0
        xb = Tensor(data[order[pos:pos + batch]])
        pos += batch
        loss = mse_loss(dec(enc(xb)), xb)
        loss.backward()
        adam_step(store, lr, beta1, beta2)
        losses.append(float(loss.data))
    return enc, np.array(losses)
