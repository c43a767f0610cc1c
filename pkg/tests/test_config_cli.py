import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oatdiff.cli import main, stage_seed
from oatdiff.config import ConfigError, RunConfig, config_hash, dump_config, parse_config
from oatdiff.forward_model import load_sinogram
from oatdiff.phantom_io import load_image

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.cfg"


def test_parse_sections_comments():
    cfg = parse_config("seed = 4  # top\n\n[scan]\n# comment line\nimage_size = 32\nspeed_of_sound=1500.5\n"
                       "[cip]\nhidden = 12, 8\n[train]\ndeterministic = false\n")
    assert cfg.seed == 4
    assert cfg.scan.image_size == 32 and cfg.scan.speed_of_sound == 1500.5
    assert cfg.cip.hidden == (12, 8)
    assert cfg.train.deterministic is False
    assert cfg.scan.n_detectors == 36


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="speed_of_sund"):
        parse_config("[scan]\nspeed_of_sund = 1490\n")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config("bogus = 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[scanner]\n")
    with pytest.raises(ConfigError):
        parse_config("[scan]\nimage_size = big\n")
    with pytest.raises(ConfigError):
        parse_config("[scan]\njust words\n")


def test_dump_roundtrip():
    cfg = parse_config(SMOKE.read_text())
    assert parse_config(dump_config(cfg)) == cfg
    assert config_hash(cfg) == config_hash(parse_config(dump_config(cfg)))
    assert config_hash(cfg) != config_hash(RunConfig())


@settings(max_examples=30, deadline=None)
@given(size=st.sampled_from([16, 32, 64]), sos=st.floats(1000, 2000), kind=st.sampled_from(["disks", "vessels"]),
       start=st.one_of(st.none(), st.floats(1e-6, 3e-5)))
def test_dump_roundtrip_property(size, sos, kind, start):
    text = f"[scan]\nimage_size = {size}\nspeed_of_sound = {sos!r}\n" \
           f"acquisition_start = {'none' if start is None else repr(start)}\n[dataset]\nkind = {kind}\n"
    cfg = parse_config(text)
    assert parse_config(dump_config(cfg)) == cfg


def test_stage_seeds_distinct():
    seeds = {stage_seed(0, s) for s in ("phantom", "simulate", "train-diff", "infer:0")}
    assert len(seeds) == 4
    assert stage_seed(0, "phantom") == stage_seed(0, "phantom")
    assert stage_seed(1, "phantom") != stage_seed(0, "phantom")


def _run(*args):
    return main([str(a) for a in args])


def test_cli_phantom_simulate_das(tmp_path):
    run = tmp_path / "run"
    assert _run("phantom", "--config", SMOKE, "--out", tmp_path / "p.pgm", "--run-dir", run) == 0
    assert _run("simulate", "--config", SMOKE, "--in", tmp_path / "p.pgm", "--out", tmp_path / "s.bin",
                "--snr", 40, "--run-dir", run) == 0
    assert _run("das", "--config", SMOKE, "--in", tmp_path / "s.bin", "--out", tmp_path / "d.pgm",
                "--run-dir", run) == 0
    img = load_image(tmp_path / "d.pgm")
    assert img.shape == (16, 16) and img.min() == 0 and img.max() == 1
    assert load_sinogram(tmp_path / "s.bin").data.shape == (36, 1024)
    man = json.loads((run / "manifest").read_text())
    assert man["version"] and len(man["config_hash"]) == 64
    assert [h["command"] for h in man["history"]] == ["phantom", "simulate", "das"]


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[scan]\nspeed_of_sund = 1490\n")
    assert _run("das", "--config", bad, "--in", "x", "--out", "y", "--run-dir", tmp_path) == 1
    assert "speed_of_sund" in capsys.readouterr().err
    assert _run("das", "--config", SMOKE, "--in", tmp_path / "missing.bin", "--out", "y",
                "--run-dir", tmp_path) == 2
    assert "missing.bin" in capsys.readouterr().err
    assert _run("das", "--config", tmp_path / "nope.cfg", "--in", "x", "--out", "y") == 2
    assert _run("frobnicate") == 1
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"OASINO99" + bytes(40))
    assert _run("das", "--config", SMOKE, "--in", junk, "--out", tmp_path / "o.pgm", "--run-dir", tmp_path) == 2


def _pipeline(run: Path, config) -> dict:
    steps = [
        ("train-cip",), ("train-diff",), ("train-baseline",), ("eval",), ("nis-sweep",),
    ]
    for s in steps:
        assert _run(s[0], "--config", config, "--run-dir", run) == 0, s
    return {p.relative_to(run).as_posix(): p.read_bytes() for p in sorted(run.rglob("*")) if p.is_file()
            and p.name != "manifest"}


def test_cli_full_pipeline_reproducible(tmp_path, capsys):
    a = _pipeline(tmp_path / "a", SMOKE)
    assert {"cip.ckpt", "denoiser.ckpt", "baseline.ckpt", "evaluation.csv", "psnr_vs_nis.csv",
            "diffusion_loss.csv"} <= set(a)
    assert sum(k.startswith("nis_sweep/") for k in a) == 7 * 2
    rows = a["psnr_vs_nis.csv"].decode().splitlines()
    assert rows[0] == "nis,psnr_mean,psnr_std,n" and [r.split(",")[0] for r in rows[1:]] == \
        ["1", "2", "3", "5", "10", "20", "50"]
    # re-run from the first run's manifest
    b = _pipeline(tmp_path / "b", tmp_path / "a" / "manifest")
    assert a == b
    capsys.readouterr()


def test_cli_infer(tmp_path):
    run = tmp_path / "r"
    for cmd in ("train-cip", "train-diff"):
        assert _run(cmd, "--config", SMOKE, "--run-dir", run) == 0
    das = tmp_path / "d.pgm"
    from oatdiff.phantom_io import save_image
    save_image(np.random.default_rng(0).random((16, 16)), das)
    assert _run("infer", "--config", SMOKE, "--in", das, "--out", tmp_path / "o.pgm", "--run-dir", run,
                "--nis", 3) == 0
    assert load_image(tmp_path / "o.pgm").shape == (16, 16)
    assert _run("infer", "--config", SMOKE, "--in", das, "--out", tmp_path / "u.pgm", "--run-dir", run,
                "--uncond") == 0
    assert _run("infer", "--config", SMOKE, "--in", das, "--out", tmp_path / "x.pgm",
                "--run-dir", tmp_path / "empty") == 2
