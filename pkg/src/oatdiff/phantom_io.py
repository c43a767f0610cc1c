"""Synthetic vessel-like phantoms and binary PGM image I/O.

Images are plain 2-D float64 arrays with values in [0, 1].
"""
from __future__ import annotations

import os
import re
import tempfile

import numpy as np


class PGMError(ValueError):
    pass


class UnsupportedMagicError(PGMError):
    pass


class MalformedHeaderError(PGMError):
    pass


class TruncatedPayloadError(PGMError):
    pass


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return img


# ---------------------------------------------------------------- phantoms

def _disks(size: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r_max = max(2.0, size / 6.0)
    for _ in range(int(rng.integers(1, 6))):
        r = rng.uniform(2.0, r_max)
        cx, cy = rng.uniform(r, size - 1 - r, size=2)
        amp = rng.uniform(0.3, 1.0)
        dist = np.hypot(xx - cx, yy - cy)
        # linear edge ramp: coverage estimate for a unit pixel
        cov = np.clip(r + 0.5 - dist, 0.0, 1.0)
        img = np.maximum(img, amp * cov)
    return img


def _segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / max(L2, 1e-12), 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _vessels(size: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(int(rng.integers(2, 7))):
        width = rng.uniform(1.0, 4.0)
        amp = rng.uniform(0.3, 1.0)
        n_seg = int(rng.integers(3, 6))
        step = size * rng.uniform(0.08, 0.14)
        x, y = rng.uniform(0.15 * size, 0.85 * size, size=2)
        heading = rng.uniform(0, 2 * np.pi)
        dist = np.full((size, size), np.inf)
        for _ in range(n_seg):
            heading += rng.normal(0.0, 0.5)
            nx = x + step * np.cos(heading)
            ny = y + step * np.sin(heading)
            if not (1 <= nx <= size - 2 and 1 <= ny <= size - 2):
                heading += np.pi  # turn back at the border
                nx = np.clip(x + step * np.cos(heading), 1, size - 2)
                ny = np.clip(y + step * np.sin(heading), 1, size - 2)
            dist = np.minimum(dist, _segment_distance(xx, yy, x, y, nx, ny))
            x, y = nx, ny
        cov = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)
        img = np.maximum(img, amp * cov)
    return img


def generate_phantom(size: int, kind: str = "vessels", seed: int = 0) -> np.ndarray:
    """Random ground-truth initial-pressure map of shape (size, size)."""
    if size < 8:
        raise ValueError("phantom size must be >= 8")
    rng = np.random.default_rng(seed)
    if kind == "disks":
        img = _disks(size, rng)
    elif kind == "vessels":
        img = _vessels(size, rng)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------- PGM

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _parse_header(buf: bytes):
    if buf[:2] != b"P5":
        if len(buf) >= 2 and buf[:1] == b"P":
            raise UnsupportedMagicError(f"unsupported PGM magic {buf[:2]!r}")
        raise MalformedHeaderError("missing PGM magic")
    pos = 2
    vals = []
    for _ in range(3):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise MalformedHeaderError("truncated PGM header")
        tok = m.group(2)
        if not tok.isdigit():
            raise MalformedHeaderError(f"bad header token {tok!r}")
        vals.append(int(tok))
        pos = m.end()
    if pos >= len(buf) or buf[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise MalformedHeaderError("expected single whitespace before payload")
    width, height, maxval = vals
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise MalformedHeaderError(f"bad dimensions/maxval {vals}")
    return width, height, maxval, pos + 1


def load_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    width, height, maxval, offset = _parse_header(buf)
    if maxval not in (255, 65535):
        raise MalformedHeaderError(f"unsupported maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * dtype.itemsize
    payload = buf[offset:offset + n]
    if len(payload) < n:
        raise TruncatedPayloadError(f"expected {n} payload bytes, found {len(payload)}")
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return raw.astype(np.float64) / maxval


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pgm(img: np.ndarray, maxval: int = 255) -> bytes:
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    img = check_image(img)
    # values are nonnegative so floor(x + 0.5) rounds half away from zero
    q = np.floor(img * maxval + 0.5)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    return header + q.astype(dtype).tobytes()


def save_image(img: np.ndarray, path, maxval: int = 255) -> None:
    atomic_write_bytes(path, encode_pgm(img, maxval))
