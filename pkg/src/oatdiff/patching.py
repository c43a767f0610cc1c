"""Two-level quadrant patching. Quadrant order: top-left, top-right, bottom-left, bottom-right."""
from __future__ import annotations

import numpy as np


def split_quadrants(image: np.ndarray) -> list[np.ndarray]:
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"image dims must be even, got {(h, w)}")
    h2, w2 = h // 2, w // 2
    return [
        image[..., :h2, :w2].copy(),
        image[..., :h2, w2:].copy(),
        image[..., h2:, :w2].copy(),
        image[..., h2:, w2:].copy(),
    ]


def assemble_quadrants(patches) -> np.ndarray:
    tl, tr, bl, br = patches
    if not (tl.shape == tr.shape == bl.shape == br.shape):
        raise ValueError("quadrant shapes differ")
    top = np.concatenate([tl, tr], axis=-1)
    bottom = np.concatenate([bl, br], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def split_subpatches_flat(patch: np.ndarray, size: int | None = None) -> list[np.ndarray]:
    """Quadrants of a square patch, each flattened row-major.

    ``size`` pins the expected side length (64 for the full-scale pipeline).
    """
    if patch.ndim != 2 or patch.shape[0] != patch.shape[1]:
        raise ValueError(f"expected a square 2-D patch, got {patch.shape}")
    if size is not None and patch.shape != (size, size):
        raise ValueError(f"expected a {size}x{size} patch, got {patch.shape}")
    return [q.reshape(-1) for q in split_quadrants(patch)]


def assemble_subpatches_flat(vectors) -> np.ndarray:
    side = int(round(np.sqrt(vectors[0].size)))
    return assemble_quadrants([v.reshape(side, side) for v in vectors])
