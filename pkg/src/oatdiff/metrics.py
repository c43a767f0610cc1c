"""PSNR / SSIM and mean +- std evaluation tables."""
from __future__ import annotations

import csv
import io
import math

import numpy as np
from scipy.signal import correlate2d

K1, K2, L = 0.01, 0.03, 1.0
C1, C2 = (K1 * L) ** 2, (K2 * L) ** 2
WIN, WIN_SIGMA = 11, 1.5


def _same(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _same(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = WIN, sigma: float = WIN_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b) -> np.ndarray:
    a, b = _same(a, b)
    if a.ndim != 2 or min(a.shape) < WIN:
        raise ValueError(f"SSIM needs 2-D images of at least {WIN}x{WIN}, got {a.shape}")
    w = gaussian_window()

    def filt(x):
        return correlate2d(x, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a, b) -> float:
    return float(np.mean(ssim_map(a, b)))


def _mean_std(vals):
    v = np.asarray(vals, dtype=np.float64)
    if np.all(np.isinf(v) & (v > 0)):
        return math.inf, 0.0
    if len(v) == 1:
        return float(v[0]), 0.0
    return float(np.mean(v)), float(np.std(v, ddof=1))


def evaluate_set(results: dict[str, list]) -> list[dict]:
    """``results`` maps method name -> list of (reconstruction, ground truth)."""
    rows = []
    for method, pairs in results.items():
        if not pairs:
            raise ValueError(f"no pairs for method {method!r}")
        s = [ssim(r, g) for r, g in pairs]
        p = [psnr(r, g) for r, g in pairs]
        sm, ss = _mean_std(s)
        pm, ps = _mean_std(p)
        rows.append(dict(method=method, ssim_mean=sm, ssim_std=ss, psnr_mean=pm, psnr_std=ps, n=len(pairs)))
    if not rows:
        raise ValueError("empty evaluation set")
    return rows


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def evaluation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std"])
    for r in rows:
        w.writerow([r["method"], _fmt(r["ssim_mean"]), _fmt(r["ssim_std"]),
                    _fmt(r["psnr_mean"]), _fmt(r["psnr_std"])])
    return buf.getvalue()


# Reported means/stds for the full-scale experiment; orientation only, not reproduced here.
REFERENCE_TABLE = {
    "Ours (NIS 50)": (0.886, 0.095, 24.045, 7.384),
    "DAS": (0.185, 0.042, 9.337, 0.738),
    "DAS+U-Net": (0.459, 0.102, 22.884, 2.220),
}
