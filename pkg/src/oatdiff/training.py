"""Dataset synthesis, model training loops and patchwise DDIM inference."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .cip import CipConfig, CipEncoder, build_condition, condition_inputs, encode_condition_tensor, train_cip
from .das import das_reconstruct
from .diffusion import (NoiseSchedule, ddim_step, diffusion_loss, from_diffusion_space,
                        make_nis_subsequence, to_diffusion_space)
from .forward_model import add_noise, simulate_sinogram
from .geometry import ScanConfig, build_geometry
from .metrics import psnr
from .models import BaselineUNet, Denoiser
from .nn.optim import ParamStore, adam_step
from .nn.tensor import Tensor, mse_loss
from .patching import assemble_quadrants, split_quadrants
from .phantom_io import atomic_write_bytes, generate_phantom

log = logging.getLogger(__name__)

_SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 512
    n_val: int = 16
    n_test: int = 10
    kind: str = "vessels"
    snr_min: float = 35.0
    snr_max: float = 75.0
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("dataset counts must be nonnegative")
        if self.snr_min > self.snr_max:
            raise ValueError("snr_min exceeds snr_max")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 5
    batch: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    deterministic: bool = True
    steps: int = 0  # > 0 overrides epochs
    seed: int = 0
    freeze_cip: bool = True
    val_every: int = 0

    def validate(self) -> None:
        if self.lr <= 0 or self.epochs < 0 or self.batch < 1 or self.steps < 0:
            raise ValueError("learning rate, epochs, batch and steps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("ADAM betas must lie in (0, 1)")


@dataclass
class PairedSet:
    gt: np.ndarray  # (n, H, W)
    das: np.ndarray  # (n, H, W)
    snr_db: np.ndarray  # (n,)

    def __len__(self):
        return len(self.gt)


def _sample_seeds(master: int, split: str, index: int):
    ss = np.random.SeedSequence([master, _SPLITS[split], index])
    return np.random.default_rng(ss)


def synthesize_dataset(spec: DatasetSpec, scan: ScanConfig, split: str = "train",
                       n: int | None = None) -> PairedSet:
    """phantom -> sinogram -> noise -> DAS, deterministic per (seed, split, index).

    Simulation uses the perturbed detector positions, DAS the nominal ones.
    """
    spec.validate()
    if n is None:
        n = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}[split]
    size = scan.image_size
    gt = np.zeros((n, size, size))
    das = np.zeros((n, size, size))
    snrs = np.zeros(n)
    if n == 0:
        return PairedSet(gt, das, snrs)
    geom = build_geometry(scan)
    nominal = geom.nominal()
    for i in range(n):
        rng = _sample_seeds(spec.seed, split, i)
        ph_seed, noise_seed = (int(v) for v in rng.integers(0, 2**63 - 1, size=2))
        snr = float(rng.uniform(spec.snr_min, spec.snr_max))
        img = generate_phantom(size, spec.kind, ph_seed)
        sino = simulate_sinogram(img, geom)
        if np.any(sino.data):
            sino = add_noise(sino, snr, noise_seed)
        gt[i] = img
        das[i] = das_reconstruct(sino, nominal)
        snrs[i] = snr
    return PairedSet(gt, das, snrs)


def to_patches(images: np.ndarray) -> np.ndarray:
    """(n, H, W) -> (n, 4, H/2, W/2) quadrant stacks."""
    return np.stack(split_quadrants(images), axis=1)


def cip_training_data(das_images: np.ndarray) -> np.ndarray:
    patches = to_patches(das_images)
    n, q, p, _ = patches.shape
    return condition_inputs(patches.reshape(n * q, p, p)).reshape(-1, (p // 2) ** 2)


def fit_cip(data: PairedSet, cfg: CipConfig, train_cfg: TrainConfig, steps: int = 200,
            dtype=np.float64):
    return train_cip(cip_training_data(data.das), cfg, steps=steps, lr=train_cfg.lr,
                     batch=max(train_cfg.batch, 16), seed=train_cfg.seed, dtype=dtype,
                     beta1=train_cfg.beta1, beta2=train_cfg.beta2)


def patch_conditions(encoder: CipEncoder, das_images: np.ndarray) -> np.ndarray:
    """(n, H, W) DAS images -> (n, 4, cond_len) conditioning vectors."""
    patches = to_patches(das_images)
    n, q, p, _ = patches.shape
    cond = build_condition(encoder, patches.reshape(n * q, p, p))
    return cond.reshape(n, q, -1)


def _rng(cfg: TrainConfig, stream: int):
    if cfg.deterministic:
        return np.random.default_rng([cfg.seed, stream])
    return np.random.default_rng()


def _n_steps(cfg: TrainConfig, n_items: int, per_step: int) -> int:
    if cfg.steps:
        return cfg.steps
    return max(1, cfg.epochs * int(np.ceil(n_items / per_step)))


def train_diffusion(data: PairedSet, denoiser: Denoiser, encoder: CipEncoder, sched: NoiseSchedule,
                    cfg: TrainConfig, callback: Callable[[int, float], None] | None = None,
                    val_fn: Callable[[], float] | None = None):
    """Minimise the noise-prediction loss over quadrant patches.

    Returns the per-step loss curve. With ``cfg.freeze_cip`` the encoder is
    only used for inference and its parameters are left untouched.
    """
    cfg.validate()
    if len(data) == 0:
        raise ValueError("empty training set")
    dtype = denoiser.dtype
    gt_patches = to_diffusion_space(to_patches(data.gt)).astype(dtype)  # (n, 4, p, p)
    n, q, p, _ = gt_patches.shape
    store = ParamStore.from_module(denoiser, "denoiser.")
    if cfg.freeze_cip:
        before = ParamStore.from_module(encoder, "cip.").digest()
        conds = patch_conditions(encoder, data.das).astype(dtype)
    else:
        for name, prm in encoder.named_parameters("cip."):
            store.add(name, prm)
        das_patches = to_patches(data.das)
    images_per_batch = max(1, cfg.batch // q)
    rng = _rng(cfg, 1)
    steps = _n_steps(cfg, n, images_per_batch)
    losses = np.zeros(steps)
    best = (-np.inf, None)
    order = rng.permutation(n)
    pos = 0
    for step in range(steps):
        if pos + images_per_batch > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + images_per_batch]
        pos += images_per_batch
        x0 = gt_patches[idx].reshape(-1, 1, p, p)
        if cfg.freeze_cip:
            cond = conds[idx].reshape(len(x0), -1)
        else:
            cond = encode_condition_tensor(encoder, das_patches[idx].reshape(-1, p, p))
        t = rng.integers(1, sched.T + 1, size=len(x0))
        eps = rng.standard_normal(x0.shape).astype(dtype)
        loss = diffusion_loss(x0, cond, t, eps, denoiser, sched)
        loss.backward()
        adam_step(store, cfg.lr, cfg.beta1, cfg.beta2)
        losses[step] = float(loss.data)
        if callback is not None:
            callback(step, losses[step])
        if val_fn is not None and cfg.val_every and (step + 1) % cfg.val_every == 0:
            score = val_fn()
            log.info("step %d val psnr %.3f", step + 1, score)
            if score > best[0]:
                best = (score, {k: v.data.copy() for k, v in store})
    if best[1] is not None:
        for k, v in store:
            v.data = best[1][k]
    if cfg.freeze_cip and ParamStore.from_module(encoder, "cip.").digest() != before:
        raise RuntimeError("CIP encoder changed while frozen")
    return losses


def train_baseline(data: PairedSet, unet: BaselineUNet, cfg: TrainConfig,
                   callback: Callable[[int, float], None] | None = None):
    """MSE regression from DAS image to ground truth."""
    cfg.validate()
    if len(data) == 0:
        raise ValueError("empty training set")
    dtype = unet.dtype
    x_all = data.das.astype(dtype)[:, None]
    y_all = data.gt.astype(dtype)[:, None]
    store = ParamStore.from_module(unet, "baseline.")
    rng = _rng(cfg, 2)
    n = len(data)
    bs = min(max(1, cfg.batch // 4), n)
    steps = _n_steps(cfg, n, bs)
    losses = np.zeros(steps)
    order = rng.permutation(n)
    pos = 0
    for step in range(steps):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + bs]
        pos += bs
        loss = mse_loss(unet(Tensor(x_all[idx])), y_all[idx])
        loss.backward()
        adam_step(store, cfg.lr, cfg.beta1, cfg.beta2)
        losses[step] = float(loss.data)
        if callback is not None:
            callback(step, losses[step])
    return losses


def baseline_predict(unet: BaselineUNet, das_images: np.ndarray) -> np.ndarray:
    out = unet(Tensor(np.asarray(das_images, dtype=unet.dtype)[:, None])).data[:, 0]
    return np.clip(out, 0.0, 1.0).astype(np.float64)


def sample_patches(denoiser, cond: np.ndarray, sched: NoiseSchedule, nis: int, eta: float,
                   rng: np.random.Generator, patch_size: int, clip_x0: bool = False) -> np.ndarray:
    """DDIM sampling of a batch of patches in diffusion space.

    ``denoiser`` is called as ``denoiser(x_t, cond, t)`` and may be a model or
    any callable returning an array/Tensor of the same shape as ``x_t``.
    """
    b = cond.shape[0]
    x = rng.standard_normal((b, 1, patch_size, patch_size))
    for t, s in make_nis_subsequence(sched.T, nis):
        eps_hat = denoiser(x, cond, np.full(b, t))
        eps_hat = np.asarray(eps_hat.data if isinstance(eps_hat, Tensor) else eps_hat,
                             dtype=np.float64).reshape(x.shape)
        z = rng.standard_normal(x.shape) if eta > 0 else None
        x = ddim_step(x, eps_hat, t, s, eta, sched, z, clip_x0=clip_x0)
    return x


def infer_image(das_image: np.ndarray, denoiser, encoder: CipEncoder | None, sched: NoiseSchedule,
                nis: int, eta: float = 0.0, seed: int = 0, cond: np.ndarray | None = None,
                clip_x0: bool = False) -> np.ndarray:
    """Patchwise conditional DDIM reconstruction of one full image.

    ``cond`` (4, cond_len) overrides the CIP encoding, e.g. zeros for
    unconditional sampling.
    """
    if not 1 <= nis <= sched.T:
        raise ValueError(f"nis must lie in [1, {sched.T}]")
    das_image = np.asarray(das_image, dtype=np.float64)
    quads = np.stack(split_quadrants(das_image))
    p = quads.shape[-1]
    if cond is None:
        cond = build_condition(encoder, quads)
    cond = np.asarray(cond, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = sample_patches(denoiser, cond, sched, nis, eta, rng, p, clip_x0)
    img = assemble_quadrants(list(from_diffusion_space(x[:, 0])))
    return np.clip(img, 0.0, 1.0)


def loss_curve_csv(rows) -> str:
    """rows of (step, loss, split) -> CSV text with a header line."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "split"])
    for step, loss, split in rows:
        w.writerow([int(step), repr(float(loss)), split])
    return buf.getvalue()


def write_loss_curve(path, losses, split: str = "train") -> None:
    atomic_write_bytes(path, loss_curve_csv((i, v, split) for i, v in enumerate(losses)).encode())


def validation_psnr(data: PairedSet, denoiser, encoder, sched, nis: int, seed: int = 0) -> float:
    vals = [psnr(infer_image(d, denoiser, encoder, sched, nis, 0.0, seed + i), g)
            for i, (g, d) in enumerate(zip(data.gt, data.das))]
    return float(np.mean(np.minimum(vals, 100.0)))


def desk_scan_config(image_size: int = 32, **kw) -> ScanConfig:
    """Paper acquisition constants on a smaller image grid."""
    return replace(ScanConfig(), image_size=image_size, **kw)
