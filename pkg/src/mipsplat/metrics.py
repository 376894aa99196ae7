"""PSNR and SSIM on linear RGB images in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatchError

PSNR_IDENTICAL = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    per_scale: dict = field(default_factory=dict)


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for unit peak; 99 dB for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return min(10.0 * np.log10(1.0 / mse), PSNR_IDENTICAL)


def luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img @ LUMA_WEIGHTS if img.ndim == 3 else img


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = len(w)
    rows = sliding_window_view(img, k, axis=0) @ w
    return sliding_window_view(rows, k, axis=1) @ w


def _filter_adjoint(grad: np.ndarray, w: np.ndarray) -> np.ndarray:
    k = len(w)
    padded = np.pad(grad, k - 1)
    return _filter_valid(padded, w[::-1])


def _ssim_terms(x: np.ndarray, y: np.ndarray):
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise DimensionMismatchError(f"image {x.shape[:2]} is smaller than the {SSIM_WINDOW}px SSIM window")
    w = gaussian_window()
    mu_x = _filter_valid(x, w)
    mu_y = _filter_valid(y, w)
    exx = _filter_valid(x * x, w)
    eyy = _filter_valid(y * y, w)
    exy = _filter_valid(x * y, w)
    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * (exy - mu_x * mu_y) + SSIM_C2
    b1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
    b2 = (exx - mu_x ** 2) + (eyy - mu_y ** 2) + SSIM_C2
    return w, mu_x, mu_y, a1, a2, b1, b2


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows of the luma channel."""
    a, b = _check_pair(a, b)
    _, _, _, a1, a2, b1, b2 = _ssim_terms(luma(a), luma(b))
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_with_grad(a: np.ndarray, b: np.ndarray):
    """SSIM and its gradient w.r.t. ``a`` (same shape as ``a``)."""
    a, b = _check_pair(a, b)
    x, y = luma(a), luma(b)
    w, mu_x, mu_y, a1, a2, b1, b2 = _ssim_terms(x, y)
    den = b1 * b2
    smap = a1 * a2 / den
    n = smap.size
    d_mu = (2 * mu_y * a2 - 2 * mu_y * a1) / den - smap * (2 * mu_x / b1) + smap * (2 * mu_x / b2)
    d_exx = -smap / b2
    d_exy = 2 * a1 / den
    gx = (_filter_adjoint(d_mu, w) + 2 * x * _filter_adjoint(d_exx, w) + y * _filter_adjoint(d_exy, w)) / n
    grad = gx[..., None] * LUMA_WEIGHTS if a.ndim == 3 else gx
    return float(np.mean(smap)), grad


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor x factor`` pixel blocks (exact box filter)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[0] // factor, img.shape[1] // factor
    if h == 0 or w == 0:
        raise DimensionMismatchError(f"cannot downsample {img.shape[:2]} by {factor}")
    img = img[: h * factor, : w * factor]
    return img.reshape(h, factor, w, factor, *img.shape[2:]).mean(axis=(1, 3))


def evaluate(rendered: np.ndarray, target: np.ndarray) -> MetricReport:
    return MetricReport(psnr(rendered, target), ssim(rendered, target))
