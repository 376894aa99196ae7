import numpy as np
import pytest

from _util import psnr_oracle, ssim_oracle
from mipsplat.errors import DimensionMismatchError
from mipsplat.metrics import box_downsample, evaluate, psnr, ssim, ssim_with_grad


def test_psnr_sentinels_and_direct_values():
    a = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(a, a) == 99.0
    assert psnr(np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.1)) == pytest.approx(20.0)


def test_psnr_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rng.uniform(size=(2, 16, 12, 3))
        assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)
        assert psnr(a, b) == psnr(b, a)


def test_psnr_monotone_in_noise_amplitude():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(32, 32, 3))
    noise = rng.normal(size=img.shape)
    vals = [psnr(img + amp * noise, img) for amp in np.linspace(0.01, 0.5, 20)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_ssim_sentinels():
    a = np.random.default_rng(3).uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(np.full((16, 16, 3), 0.9), np.full((16, 16, 3), 0.1)) < 1.0


def test_ssim_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(3):
        a = rng.uniform(size=(24, 20, 3))
        b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)


def test_ssim_gradient_finite_differences():
    rng = np.random.default_rng(5)
    a = rng.uniform(size=(14, 13, 3))
    b = rng.uniform(size=a.shape)
    val, grad = ssim_with_grad(a, b)
    assert val == pytest.approx(ssim(a, b), abs=1e-15)
    h = 1e-6
    for _ in range(10):
        idx = tuple(rng.integers(0, s) for s in a.shape)
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
        assert grad[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_shape_errors():
    with pytest.raises(DimensionMismatchError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(DimensionMismatchError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_box_downsample_block_means():
    img = np.arange(16.0).reshape(4, 4)
    np.testing.assert_array_equal(box_downsample(img, 2), [[2.5, 4.5], [10.5, 12.5]])
    rgb = np.random.default_rng(6).uniform(size=(8, 8, 3))
    np.testing.assert_allclose(box_downsample(rgb, 4)[1, 0], rgb[4:8, 0:4].mean(axis=(0, 1)))
    with pytest.raises(DimensionMismatchError):
        box_downsample(rgb, 16)


def test_evaluate_report():
    a = np.random.default_rng(7).uniform(size=(16, 16, 3))
    rep = evaluate(a, a)
    assert rep.psnr == 99.0 and rep.ssim == pytest.approx(1.0)
