"""Distortion metrics on float RGB images in [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(pred, ref):
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape:
        raise ShapeError(f"metric operands differ in shape: {p.shape} vs {r.shape}")
    return p, r


def psnr(pred, ref, peak: float = 1.0, cap: float = 100.0) -> float:
    """``10 log10(peak^2 / MSE)``, or ``cap`` for a zero MSE."""
    p, r = _pair(pred, ref)
    mse = float(np.mean((p - r) ** 2))
    if mse == 0.0:
        return float(cap)
    return min(float(cap), 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode Gaussian filtering of an (H, W) plane."""
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def _ssim_plane(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(pred, ref, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM averaged over channels (and batch, if present)."""
    p, r = _pair(pred, ref)
    if p.ndim == 2:
        p, r = p[..., None], r[..., None]
    if p.shape[-3] < SSIM_WINDOW or p.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {p.shape[-3:-1]}")
    p = p.reshape((-1,) + p.shape[-3:])
    r = r.reshape((-1,) + r.shape[-3:])
    vals = [_ssim_plane(p[b, :, :, c], r[b, :, :, c], data_range) for b in range(p.shape[0]) for c in range(p.shape[-1])]
    return float(np.mean(vals))
