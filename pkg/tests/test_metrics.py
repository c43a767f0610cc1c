import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oatdiff.metrics import C1, C2, REFERENCE_TABLE, evaluate_set, evaluation_csv, gaussian_window, psnr, ssim


def psnr_loops(a, b):
    acc = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            acc += (a[i, j] - b[i, j]) ** 2
    return 10 * math.log10(1.0 / (acc / a.size))


def ssim_loops(a, b):
    w = gaussian_window()
    k = w.shape[0]
    vals = []
    for i in range(a.shape[0] - k + 1):
        for j in range(a.shape[1] - k + 1):
            pa, pb = a[i:i + k, j:j + k], b[i:i + k, j:j + k]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - ma) ** 2)
            vb = np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            vals.append((2 * ma * mb + C1) * (2 * cov + C2) / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


def test_psnr_examples():
    a = np.full((4, 4), 0.3)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)
    assert psnr(a, a) == math.inf
    with pytest.raises(ValueError):
        psnr(a, np.zeros((4, 5)))


def test_psnr_brute_force(rng):
    a, b = rng.random((2, 13, 9))
    assert abs(psnr(a, b) - psnr_loops(a, b)) <= 1e-12


def test_ssim_brute_force(rng):
    for _ in range(3):
        a, b = rng.random((2, 16, 16))
        assert abs(ssim(a, b) - ssim_loops(a, b)) <= 1e-9


def test_ssim_identity_and_symmetry(rng):
    a, b = rng.random((2, 20, 20))
    assert ssim(a, a) == 1.0
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_window_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert abs(w.sum() - 1.0) <= 1e-15
    np.testing.assert_allclose(w, w.T, rtol=0, atol=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_monotone_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16))
    d = rng.standard_normal((16, 16))
    vals = [psnr(a, a + s * d) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    s = ssim(a, rng.random((16, 16)))
    assert -1.0 <= s <= 1.0


def test_ssim_decreases_with_noise():
    rng = np.random.default_rng(0)
    a = np.clip(rng.random((32, 32)) * 0.5 + 0.25, 0, 1)
    means = []
    for sigma in (0.01, 0.05, 0.1, 0.2):
        means.append(np.mean([ssim(a, a + sigma * rng.standard_normal(a.shape)) for _ in range(20)]))
    assert all(x > y for x, y in zip(means, means[1:]))


def test_evaluate_single_identical(rng):
    a = rng.random((12, 12))
    row = evaluate_set({"m": [(a, a)]})[0]
    assert row["ssim_mean"] == 1.0 and row["psnr_mean"] == math.inf
    assert row["ssim_std"] == 0.0 and row["psnr_std"] == 0.0


def test_evaluate_two_pairs(rng):
    g = rng.random((12, 12))
    r1, r2 = g + 0.1, g + 0.05
    row = evaluate_set({"m": [(r1, g), (r2, g)]})[0]
    p1, p2 = psnr(r1, g), psnr(r2, g)
    assert row["psnr_mean"] == pytest.approx((p1 + p2) / 2, rel=1e-14)
    assert row["psnr_std"] == pytest.approx(abs(p1 - p2) / math.sqrt(2), rel=1e-12)
    s1, s2 = ssim(r1, g), ssim(r2, g)
    assert row["ssim_mean"] == pytest.approx((s1 + s2) / 2, rel=1e-14)


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate_set({})
    with pytest.raises(ValueError):
        evaluate_set({"m": []})


def test_csv_format(rng):
    a = rng.random((12, 12))
    text = evaluation_csv(evaluate_set({"same": [(a, a)]}))
    lines = text.splitlines()
    assert lines[0] == "method,ssim_mean,ssim_std,psnr_mean,psnr_std"
    assert lines[1] == "same,1.0,0.0,inf,0.0"


def test_reference_table():
    assert REFERENCE_TABLE["DAS"] == (0.185, 0.042, 9.337, 0.738)
    assert REFERENCE_TABLE["Ours (NIS 50)"][2] == 24.045
