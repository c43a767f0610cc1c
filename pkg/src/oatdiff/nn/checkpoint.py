"""OACKPT01 checkpoint files: named float32 tensors, little-endian."""
from __future__ import annotations

import struct

import numpy as np

from ..phantom_io import atomic_write_bytes

CKPT_MAGIC = b"OACKPT01"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    out = [CKPT_MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:8]!r}")
    try:
        (count,) = struct.unpack_from("<I", buf, 8)
        pos = 12
        out = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + ln].decode("utf-8")
            pos += ln
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(buf):
                raise CheckpointError(f"truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).copy()
            pos += 4 * n
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from None
    return out


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def state_dict(module, prefix: str) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in module.named_parameters(prefix)}


def load_into(module, tensors: dict[str, np.ndarray], prefix: str) -> None:
    named = dict(module.named_parameters(prefix))
    unknown = [k for k in tensors if k.startswith(prefix) and k not in named]
    missing = [k for k in named if k not in tensors]
    if unknown or missing:
        raise CheckpointError(f"checkpoint mismatch: missing {missing[:3]}, unexpected {unknown[:3]}")
    for name, p in named.items():
        src = tensors[name]
        if src.shape != p.shape:
            raise CheckpointError(f"shape mismatch for {name}: {src.shape} vs {p.shape}")
        p.data = src.astype(p.dtype)
