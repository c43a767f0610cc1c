"""Command-line front end: ``oatdiff <subcommand> --config run.cfg ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed files), 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cip import CipEncoder, train_cip
from .config import ConfigError, RunConfig, config_hash, dump_config, parse_config
from .das import das_reconstruct
from .diffusion import make_schedule
from .forward_model import SinogramFormatError, add_noise, load_sinogram, save_sinogram, simulate_sinogram
from .geometry import build_geometry
from .metrics import evaluate_set, evaluation_csv, psnr
from .models import build_baseline_unet, build_denoiser
from .nn.checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint, state_dict
from .phantom_io import PGMError, atomic_write_bytes, generate_phantom, load_image, save_image
from .training import (baseline_predict, cip_training_data, infer_image, synthesize_dataset, train_baseline,
                       train_diffusion, write_loss_curve)

log = logging.getLogger("oatdiff")

NIS_SWEEP = (1, 2, 3, 5, 10, 20, 50)
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class NumericError(RuntimeError):
    pass


def stage_seed(master: int, stage: str) -> int:
    """Child seed of the run seed for one named stage."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def read_config(path) -> RunConfig:
    """A config file, or a manifest written by an earlier run."""
    text = _read_text(path)
    if text.lstrip().startswith("{"):
        try:
            text = json.loads(text)["config"]
        except (ValueError, KeyError):
            raise ConfigError(f"{path}: not a valid manifest") from None
    return parse_config(text)


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"file not found: {path}") from None


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def _finite(arr, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def write_manifest(run_dir: Path, cfg: RunConfig, command: str, argv, seeds: dict) -> None:
    """One manifest per run directory; each command appends to its history."""
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "manifest"
    history = []
    if path.is_file():
        try:
            prev = json.loads(path.read_text(encoding="utf-8"))
            if prev.get("config_hash") == config_hash(cfg):
                history = prev.get("history", [])
        except ValueError:
            pass
    history.append({"command": command, "argv": list(argv), "seeds": seeds})
    doc = {
        "toolkit": "oatdiff",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seeds": seeds,
        "history": history,
        "config": dump_config(cfg),
    }
    atomic_write_bytes(run_dir / "manifest", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def _dtype(cfg: RunConfig):
    if cfg.dtype not in ("float32", "float64"):
        raise ConfigError(f"dtype must be float32 or float64, got {cfg.dtype!r}")
    return np.dtype(cfg.dtype)


def _schedule(cfg: RunConfig):
    d = cfg.diffusion
    return make_schedule(d.steps, d.beta_start, d.beta_end)


def _train_cfg(cfg: RunConfig, stage: str, section: str = "train"):
    tc = getattr(cfg, section)
    return replace(tc, seed=stage_seed(cfg.seed, f"{stage}:{tc.seed}"))


def _dataset(cfg: RunConfig, split: str):
    return synthesize_dataset(cfg.dataset, cfg.scan, split)


def _load_cip(cfg: RunConfig, path) -> CipEncoder:
    enc = CipEncoder(cfg.cip, np.random.default_rng(0), _dtype(cfg))
    load_into(enc, load_checkpoint(_require(path)), "cip.")
    return enc


def _load_denoiser(cfg: RunConfig, path):
    den = build_denoiser(cfg.denoiser, 0, _dtype(cfg))
    load_into(den, load_checkpoint(_require(path)), "denoiser.")
    return den


def _load_baseline(cfg: RunConfig, path):
    net = build_baseline_unet(cfg.denoiser, 0, _dtype(cfg))
    load_into(net, load_checkpoint(_require(path)), "baseline.")
    return net


# ---------------------------------------------------------------- subcommands

def cmd_phantom(args, cfg):
    seed = stage_seed(cfg.seed, "phantom") if args.seed is None else args.seed
    img = generate_phantom(cfg.scan.image_size, cfg.dataset.kind, seed)
    save_image(img, args.out)
    return {"phantom": seed}


def cmd_simulate(args, cfg):
    img = load_image(_require(args.inp))
    geom = build_geometry(cfg.scan)
    sino = simulate_sinogram(img, geom)
    seed = stage_seed(cfg.seed, "simulate")
    if args.snr is not None and math.isfinite(args.snr) and np.any(sino.data):
        sino = add_noise(sino, args.snr, seed)
    _finite(sino.data, "sinogram")
    save_sinogram(sino, args.out)
    return {"noise": seed}


def cmd_das(args, cfg):
    sino = load_sinogram(_require(args.inp))
    img = das_reconstruct(sino, build_geometry(cfg.scan).nominal())
    save_image(_finite(img, "DAS image"), args.out)
    return {}


def cmd_train_cip(args, cfg):
    data = _dataset(cfg, "train")
    seed = stage_seed(cfg.seed, "train-cip")
    ct = cfg.cip_train
    enc, losses = train_cip(cip_training_data(data.das), cfg.cip, steps=ct.steps, lr=ct.lr,
                            batch=ct.batch, seed=seed, dtype=_dtype(cfg))
    _finite(losses, "CIP loss")
    save_checkpoint(args.run_dir / "cip.ckpt", state_dict(enc, "cip."))
    write_loss_curve(args.run_dir / "cip_loss.csv", losses)
    return {"train-cip": seed, "dataset": cfg.dataset.seed}


def cmd_train_diff(args, cfg):
    data = _dataset(cfg, "train")
    enc = _load_cip(cfg, args.cip or args.run_dir / "cip.ckpt")
    tc = _train_cfg(cfg, "train-diff")
    den = build_denoiser(cfg.denoiser, stage_seed(cfg.seed, "denoiser-init"), _dtype(cfg))
    losses = train_diffusion(data, den, enc, _schedule(cfg), tc)
    _finite(losses, "diffusion loss")
    save_checkpoint(args.run_dir / "denoiser.ckpt", state_dict(den, "denoiser."))
    if not tc.freeze_cip:
        save_checkpoint(args.run_dir / "cip.ckpt", state_dict(enc, "cip."))
    write_loss_curve(args.run_dir / "diffusion_loss.csv", losses)
    return {"train-diff": tc.seed, "dataset": cfg.dataset.seed}


def cmd_train_baseline(args, cfg):
    data = _dataset(cfg, "train")
    tc = _train_cfg(cfg, "train-baseline", "baseline")
    net = build_baseline_unet(cfg.denoiser, stage_seed(cfg.seed, "baseline-init"), _dtype(cfg))
    losses = train_baseline(data, net, tc)
    _finite(losses, "baseline loss")
    save_checkpoint(args.run_dir / "baseline.ckpt", state_dict(net, "baseline."))
    write_loss_curve(args.run_dir / "baseline_loss.csv", losses)
    return {"train-baseline": tc.seed, "dataset": cfg.dataset.seed}


def _infer(cfg, das, enc, den, nis, seed, uncond=False):
    sched = _schedule(cfg)
    cond = None
    if uncond:
        cond = np.zeros((4, cfg.denoiser.cond_length))
    img = infer_image(das, den, enc, sched, nis, cfg.infer.eta, seed, cond, cfg.infer.clip_x0)
    return _finite(img, "reconstruction")


def cmd_infer(args, cfg):
    das = load_image(_require(args.inp))
    enc = _load_cip(cfg, args.cip or args.run_dir / "cip.ckpt")
    den = _load_denoiser(cfg, args.denoiser or args.run_dir / "denoiser.ckpt")
    nis = args.nis or cfg.infer.nis
    seed = stage_seed(cfg.seed, f"infer:{cfg.infer.seed}")
    save_image(_infer(cfg, das, enc, den, nis, seed, args.uncond), args.out)
    return {"infer": seed}


def cmd_eval(args, cfg):
    test = _dataset(cfg, "test")
    enc = _load_cip(cfg, args.cip or args.run_dir / "cip.ckpt")
    den = _load_denoiser(cfg, args.denoiser or args.run_dir / "denoiser.ckpt")
    nis = args.nis or cfg.infer.nis
    base = stage_seed(cfg.seed, f"infer:{cfg.infer.seed}")
    results = {"DAS": list(zip(test.das, test.gt))}
    ours = [_infer(cfg, d, enc, den, nis, base + i) for i, d in enumerate(test.das)]
    results[f"Ours (NIS {nis})"] = list(zip(ours, test.gt))
    bpath = Path(args.baseline) if args.baseline else args.run_dir / "baseline.ckpt"
    if bpath.is_file():
        net = _load_baseline(cfg, bpath)
        results["DAS+U-Net"] = list(zip(baseline_predict(net, test.das), test.gt))
    text = evaluation_csv(evaluate_set(results))
    atomic_write_bytes(args.run_dir / "evaluation.csv", text.encode())
    sys.stdout.write(text)
    return {"infer": base, "dataset": cfg.dataset.seed}


def psnr_vs_nis_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["nis", "psnr_mean", "psnr_std", "n"])
    for nis, vals in rows:
        v = np.asarray(vals, dtype=np.float64)
        std = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
        w.writerow([nis, repr(float(np.mean(v))), repr(std), len(v)])
    return buf.getvalue()


def cmd_nis_sweep(args, cfg):
    enc = _load_cip(cfg, args.cip or args.run_dir / "cip.ckpt")
    den = _load_denoiser(cfg, args.denoiser or args.run_dir / "denoiser.ckpt")
    base = stage_seed(cfg.seed, f"infer:{cfg.infer.seed}")
    if args.inp:
        das_list = [load_image(_require(args.inp))]
        gt_list = [load_image(_require(args.gt))] if args.gt else [None]
    else:
        test = _dataset(cfg, "test")
        das_list, gt_list = list(test.das), list(test.gt)
    out_dir = args.run_dir / "nis_sweep"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for nis in NIS_SWEEP:
        vals = []
        for i, (das, gt) in enumerate(zip(das_list, gt_list)):
            img = _infer(cfg, das, enc, den, nis, base + i)
            save_image(img, out_dir / f"nis{nis:02d}_{i:03d}.pgm")
            if gt is not None:
                vals.append(psnr(img, gt))
        if vals:
            rows.append((nis, vals))
    if rows:
        text = psnr_vs_nis_csv(rows)
        atomic_write_bytes(args.run_dir / "psnr_vs_nis.csv", text.encode())
        sys.stdout.write(text)
    return {"infer": base}


COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "das": cmd_das,
    "train-cip": cmd_train_cip,
    "train-diff": cmd_train_diff,
    "train-baseline": cmd_train_baseline,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "nis-sweep": cmd_nis_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oatdiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"oatdiff {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, inp=False, out=False):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="key=value config file or run manifest")
        s.add_argument("--run-dir", type=Path, default=Path("run"), help="output directory (default: run)")
        if inp:
            s.add_argument("--in", dest="inp", required=inp == "required")
        if out:
            s.add_argument("--out", required=True)
        return s

    s = add("phantom", "write a synthetic phantom PGM", out=True)
    s.add_argument("--seed", type=int)
    s = add("simulate", "phantom PGM -> OASINO01 sinogram", inp="required", out=True)
    s.add_argument("--snr", type=float, help="noise SNR in dB (default: noiseless)")
    add("das", "sinogram -> normalized DAS image PGM", inp="required", out=True)
    add("train-cip", "pretrain the conditioning autoencoder")
    for name, help_ in (("train-diff", "train the conditional denoiser"),
                        ("train-baseline", "train the DAS -> image regression U-Net")):
        s = add(name, help_)
        if name == "train-diff":
            s.add_argument("--cip")
    for name, help_, inp, out in (("infer", "patchwise DDIM reconstruction of a DAS image", "required", True),
                                  ("eval", "SSIM/PSNR table on the held-out split", False, False),
                                  ("nis-sweep", "reconstruct at NIS in 1,2,3,5,10,20,50", True, False)):
        s = add(name, help_, inp=inp, out=out)
        s.add_argument("--cip")
        s.add_argument("--denoiser")
        if name != "nis-sweep":
            s.add_argument("--nis", type=int)
        else:
            s.add_argument("--gt", help="ground-truth PGM for the PSNR column")
            s.set_defaults(nis=None)
        if name == "infer":
            s.add_argument("--uncond", action="store_true", help="zero conditioning vector")
        if name == "eval":
            s.add_argument("--baseline")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=os.environ.get("OATDIFF_LOG", "WARNING"), format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = read_config(args.config)
        _dtype(cfg)
        args.run_dir.mkdir(parents=True, exist_ok=True)
        seeds = COMMANDS[args.command](args, cfg)
        write_manifest(args.run_dir, cfg, args.command, argv, {"run": cfg.seed, **seeds})
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PGMError, SinogramFormatError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
