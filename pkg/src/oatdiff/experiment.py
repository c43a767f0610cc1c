"""Desk-scale train-and-evaluate run shared by the acceptance suite and scripts."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cip import train_cip
from .config import RunConfig
from .diffusion import make_schedule
from .metrics import psnr
from .models import build_denoiser
from .training import cip_training_data, infer_image, synthesize_dataset, train_diffusion

NIS_SWEEP = (1, 2, 3, 5, 10, 20, 50)


@dataclass
class DeskResult:
    losses: np.ndarray
    train_seconds: float
    gt: np.ndarray
    das: np.ndarray
    # nis -> (n_test,) PSNR arrays
    cond_psnr: dict = field(default_factory=dict)
    uncond_psnr: dict = field(default_factory=dict)
    recon: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)

    @property
    def das_psnr(self) -> np.ndarray:
        return np.array([psnr(d, g) for d, g in zip(self.das, self.gt)])

    def loss_ratio(self, window: int = 100) -> float:
        return float(self.losses[-window:].mean() / self.losses[:window].mean())


def run_desk(cfg: RunConfig, nis_values=NIS_SWEEP, uncond_nis=(20,), log=print) -> DeskResult:
    """Train CIP + denoiser on the configured dataset and sweep NIS on the test split."""
    dtype = np.dtype(cfg.dtype)
    t0 = time.perf_counter()
    train = synthesize_dataset(cfg.dataset, cfg.scan, "train")
    test = synthesize_dataset(cfg.dataset, cfg.scan, "test")
    ct = cfg.cip_train
    enc, _ = train_cip(cip_training_data(train.das), cfg.cip, steps=ct.steps, lr=ct.lr, batch=ct.batch,
                       seed=cfg.seed, dtype=dtype)
    den = build_denoiser(cfg.denoiser, cfg.seed, dtype)
    sched = make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end)
    losses = train_diffusion(train, den, enc, sched, cfg.train)
    res = DeskResult(losses, time.perf_counter() - t0, test.gt, test.das)
    log(f"trained in {res.train_seconds:.0f} s, loss ratio {res.loss_ratio():.3f}")
    zero = np.zeros((4, cfg.denoiser.cond_length))
    for nis in nis_values:
        imgs = [infer_image(d, den, enc, sched, nis, cfg.infer.eta, cfg.infer.seed + i)
                for i, d in enumerate(test.das)]
        res.recon[nis] = np.stack(imgs)
        res.cond_psnr[nis] = np.array([psnr(r, g) for r, g in zip(imgs, test.gt)])
        if nis in uncond_nis:
            un = [infer_image(d, den, enc, sched, nis, cfg.infer.eta, cfg.infer.seed + i, cond=zero)
                  for i, d in enumerate(test.das)]
            res.uncond_psnr[nis] = np.array([psnr(r, g) for r, g in zip(un, test.gt)])
        log(f"NIS {nis:3d}: mean PSNR {res.cond_psnr[nis].mean():.2f} dB")
    return res
