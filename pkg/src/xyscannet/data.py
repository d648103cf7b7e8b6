"""Procedural sharp images, linear motion-blur kernels and paired samples."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigError, ContractError


def motion_kernel(length: float, angle_deg: float) -> np.ndarray:
    """Normalized linear motion segment of ``length`` pixels at ``angle_deg``.

    The segment is centred in an odd-sized square support and rasterized by
    bilinear splatting of densely sampled points, so it sums to 1.
    """
    if length < 1:
        raise ContractError(f"kernel length must be >= 1, got {length}")
    if length == 1:
        return np.ones((1, 1))
    size = int(math.ceil(length))
    size += 1 - size % 2
    k = np.zeros((size, size))
    c = (size - 1) / 2
    theta = math.radians(angle_deg)
    dx, dy = math.cos(theta), -math.sin(theta)
    for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, int(8 * length) + 1):
        x, y = c + t * dx, c + t * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, xx, wgt in (
            (y0, x0, (1 - fx) * (1 - fy)),
            (y0, x0 + 1, fx * (1 - fy)),
            (y0 + 1, x0, (1 - fx) * fy),
            (y0 + 1, x0 + 1, fx * fy),
        ):
            if 0 <= yy < size and 0 <= xx < size:
                k[yy, xx] += wgt
    return k / k.sum()


def blur(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve an (H, W, C) image with ``kernel`` using reflect borders."""
    kh, kw = kernel.shape
    if kh == kw == 1:
        return image * kernel[0, 0]
    rh, rw = kh // 2, kw // 2
    H, W = image.shape[:2]
    padded = np.pad(image, ((rh, rh), (rw, rw), (0, 0)), mode="reflect")
    flipped = kernel[::-1, ::-1]
    out = np.zeros_like(image, dtype=np.float64)
    for i, j in zip(*np.nonzero(flipped)):
        out += flipped[i, j] * padded[i : i + H, j : j + W]
    return out


def _random_color(rng) -> tuple:
    return tuple(int(v) for v in rng.integers(0, 256, 3))


def procedural_image(rng: np.random.Generator, size) -> np.ndarray:
    """Sharp test image in [0, 1]: gradient background plus polygons,
    a checkerboard patch and thick strokes."""
    H, W = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)), 0, 1)[..., None]
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    base = (1 - t) * c0 + t * c1

    img = Image.fromarray((base * 255).astype(np.uint8), "RGB")
    draw = ImageDraw.Draw(img)
    for _ in range(rng.integers(2, 5)):
        n = int(rng.integers(3, 7))
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        r = rng.uniform(0.1, 0.35) * min(H, W)
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        pts = [(float(cx + r * np.cos(a)), float(cy + r * np.sin(a))) for a in angles]
        draw.polygon(pts, fill=_random_color(rng))

    cell = int(rng.integers(3, 8))
    x0, y0 = int(rng.integers(0, max(1, W - 4 * cell))), int(rng.integers(0, max(1, H - 4 * cell)))
    ca, cb = _random_color(rng), _random_color(rng)
    for i in range(4):
        for j in range(4):
            box = (x0 + j * cell, y0 + i * cell, x0 + (j + 1) * cell - 1, y0 + (i + 1) * cell - 1)
            draw.rectangle(box, fill=ca if (i + j) % 2 == 0 else cb)

    for _ in range(rng.integers(1, 4)):
        pts = [(float(rng.uniform(0, W)), float(rng.uniform(0, H))) for _ in range(3)]
        draw.line(pts, fill=_random_color(rng), width=int(rng.integers(1, 4)))
    return np.asarray(img, dtype=np.float64) / 255.0


def _draw(rng, value):
    if np.isscalar(value):
        return float(value)
    lo, hi = value
    return float(rng.uniform(lo, hi))


def synth_pair(
    rng: np.random.Generator,
    size=64,
    kernel_len_range: Sequence = (3, 15),
    angle_range: Sequence = (0.0, 180.0),
    noise_sigma=(0.0, 0.01),
    return_kernel: bool = False,
):
    """Return ``(blurred, sharp)`` (H, W, 3) float arrays in [0, 1]."""
    sharp = procedural_image(rng, size)
    lo, hi = kernel_len_range if not np.isscalar(kernel_len_range) else (kernel_len_range,) * 2
    if lo < 1:
        raise ContractError(f"kernel length must be >= 1, got {lo}")
    length = int(rng.integers(int(lo), int(hi) + 1))
    kernel = motion_kernel(length, _draw(rng, angle_range))
    sigma = _draw(rng, noise_sigma)
    blurred = blur(sharp, kernel)
    if sigma > 0:
        blurred = blurred + rng.normal(0.0, sigma, blurred.shape)
    blurred = np.clip(blurred, 0.0, 1.0)
    if return_kernel:
        return blurred, sharp, kernel
    return blurred, sharp


def make_pairs(seed: int, n: int, size=64, **kwargs) -> list:
    rng = np.random.default_rng(seed)
    return [synth_pair(rng, size, **kwargs) for _ in range(n)]


def sample_batch(rng: np.random.Generator, pairs: Sequence, batch: int, patch: int, dtype=np.float32):
    """Random pairs with aligned random crops; returns (blurred, sharp) NHWC."""
    if not pairs:
        raise ContractError("data source is empty")
    idx = rng.integers(0, len(pairs), batch)
    bl, sh = [], []
    for i in idx:
        b, s = pairs[int(i)]
        H, W = s.shape[:2]
        ph, pw = min(patch, H), min(patch, W)
        y = int(rng.integers(0, H - ph + 1))
        x = int(rng.integers(0, W - pw + 1))
        bl.append(b[y : y + ph, x : x + pw])
        sh.append(s[y : y + ph, x : x + pw])
    return np.stack(bl).astype(dtype), np.stack(sh).astype(dtype)


@dataclass
class DataConfig:
    pairs: int = 8
    size: int = 64
    kernel_min: int = 3
    kernel_max: int = 15
    noise_max: float = 0.01

    def __post_init__(self):
        if self.pairs < 1:
            raise ConfigError("data.pairs", "must be >= 1")
        if self.size < 8:
            raise ConfigError("data.size", "must be >= 8")
        if not 1 <= self.kernel_min <= self.kernel_max:
            raise ConfigError("data.kernel_min", "need 1 <= kernel_min <= kernel_max")
        if self.noise_max < 0:
            raise ConfigError("data.noise_max", "must be >= 0")

    def make(self, seed: int) -> list:
        return make_pairs(
            seed, self.pairs, self.size,
            kernel_len_range=(self.kernel_min, self.kernel_max),
            noise_sigma=(0.0, self.noise_max),
        )
