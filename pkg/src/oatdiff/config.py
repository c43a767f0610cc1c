"""Plain-text run configuration: ``[section]`` headers, ``key = value`` lines, ``#`` comments.

Every key maps onto a field of one of the stage dataclasses. Unknown sections
or keys are a hard error naming the offender.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace

from .cip import CipConfig
from .geometry import ScanConfig
from .models import DenoiserConfig
from .training import DatasetSpec, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class InferConfig:
    nis: int = 20
    eta: float = 0.0
    clip_x0: bool = False
    seed: int = 0


@dataclass(frozen=True)
class CipTrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    batch: int = 64


@dataclass(frozen=True)
class RunConfig:
    scan: ScanConfig = field(default_factory=ScanConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    cip: CipConfig = field(default_factory=CipConfig)
    cip_train: CipTrainConfig = field(default_factory=CipTrainConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    dtype: str = "float64"
    seed: int = 0


SECTIONS = ("scan", "dataset", "cip", "cip_train", "denoiser", "diffusion", "train", "baseline", "infer")
_TOP = ("dtype", "seed")


def _convert(raw: str, current, where: str):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if current is None:
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    updates: dict[str, dict] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        target = getattr(cfg, section) if section else cfg
        names = {f.name for f in fields(target)} if section else set(_TOP)
        where = f"line {lineno}"
        if key not in names:
            scope = f"[{section}]" if section else "top level"
            raise ConfigError(f"{where}: unknown config key {key!r} in {scope}")
        updates.setdefault(section or "", {})[key] = _convert(value, getattr(target, key), where)
    top = updates.pop("", {})
    parts = {name: replace(getattr(cfg, name), **vals) for name, vals in updates.items()}
    return replace(cfg, **parts, **top)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form; parse_config(dump_config(c)) == c."""
    lines = [f"{k} = {_fmt(getattr(cfg, k))}" for k in _TOP]
    for name in SECTIONS:
        lines.append(f"\n[{name}]")
        part = getattr(cfg, name)
        lines.extend(f"{f.name} = {_fmt(getattr(part, f.name))}" for f in fields(part))
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def as_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
