"""Delay-and-sum reconstruction."""
from __future__ import annotations

import numpy as np

from .forward_model import Sinogram, _check_sino
from .geometry import ScanGeometry


def das_raw(sino: Sinogram, geom: ScanGeometry) -> np.ndarray:
    """S(r) = sum_d s(d, tau_d(r)), linearly interpolated; out-of-window samples are 0."""
    _check_sino(sino, geom)
    if not (np.isclose(sino.t_start, geom.t_start, rtol=0, atol=1e-15)
            and np.isclose(sino.sample_rate, geom.sample_rate)):
        raise ValueError("sinogram timing does not match geometry")
    u = geom.fractional_samples()
    n_t = geom.n_samples
    fl = np.floor(u)
    frac = u - fl
    k0 = fl.astype(np.int64)
    k1 = k0 + 1
    w0 = np.where((k0 >= 0) & (k0 < n_t), 1.0 - frac, 0.0)
    w1 = np.where((k1 >= 0) & (k1 < n_t), frac, 0.0)
    k0 = np.clip(k0, 0, n_t - 1)
    k1 = np.clip(k1, 0, n_t - 1)
    rows = np.arange(geom.n_detectors)[:, None]
    contrib = sino.data[rows, k0] * w0 + sino.data[rows, k1] * w1
    # summing sorted contributions makes the result independent of detector order
    contrib = np.sort(contrib, axis=0)
    out = np.zeros(u.shape[1])
    for row in contrib:
        out += row
    return out.reshape(geom.image_shape)


def normalize(field: np.ndarray) -> np.ndarray:
    lo, hi = float(field.min()), float(field.max())
    if hi == lo:
        return np.full(field.shape, 0.5)
    return (field - lo) / (hi - lo)


def das_reconstruct(sino: Sinogram, geom: ScanGeometry) -> np.ndarray:
    return normalize(das_raw(sino, geom))
