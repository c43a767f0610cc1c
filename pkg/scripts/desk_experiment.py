"""Desk-scale train + NIS sweep; writes loss curve, PSNR-vs-NIS and per-image PSNR CSVs.

    python scripts/desk_experiment.py --config configs/desk.cfg --out results/desk
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from oatdiff.config import load_config
from oatdiff.experiment import NIS_SWEEP, run_desk
from oatdiff.phantom_io import save_image
from oatdiff.training import write_loss_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.cfg")
    ap.add_argument("--out", type=Path, default=Path("results/desk"))
    args = ap.parse_args()
    cfg = load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    res = run_desk(cfg, NIS_SWEEP, uncond_nis=NIS_SWEEP)
    write_loss_curve(args.out / "diffusion_loss.csv", res.losses)
    with open(args.out / "psnr_vs_nis.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nis", "cond_mean", "cond_std", "uncond_mean", "uncond_std", "das_mean"])
        for nis in NIS_SWEEP:
            c, u = res.cond_psnr[nis], res.uncond_psnr[nis]
            w.writerow([nis, c.mean(), c.std(ddof=1), u.mean(), u.std(ddof=1), res.das_psnr.mean()])
    with open(args.out / "per_image_psnr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "das"] + [f"cond_nis{n}" for n in NIS_SWEEP] + [f"uncond_nis{n}" for n in NIS_SWEEP])
        for i in range(len(res.gt)):
            w.writerow([i, res.das_psnr[i]] + [res.cond_psnr[n][i] for n in NIS_SWEEP]
                       + [res.uncond_psnr[n][i] for n in NIS_SWEEP])
    for i in range(min(3, len(res.gt))):
        save_image(res.gt[i], args.out / f"gt_{i}.pgm")
        save_image(res.das[i], args.out / f"das_{i}.pgm")
        for nis in NIS_SWEEP:
            save_image(res.recon[nis][i], args.out / f"recon_{i}_nis{nis:02d}.pgm")
    print(f"loss ratio {res.loss_ratio():.3f}; results in {args.out}")


if __name__ == "__main__":
    main()
