"""Composite restoration loss: Charbonnier + edge + feature distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import conv2d, ops
from .autodiff.tensor import Tensor, as_tensor
from .errors import ConfigError, ContractError, ShapeError

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass
class LossWeights:
    lambda1: float = 0.05  # edge term
    lambda2: float = 0.0005  # perceptual term
    eps_char: float = 1e-3

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "eps_char"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, "must be >= 0")


def _same_shape(x: Tensor, y: Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"loss operands differ in shape: {x.shape} vs {y.shape}")


def charbonnier(x, y, eps: float = 1e-3) -> Tensor:
    """Mean of ``sqrt((x - y)^2 + eps^2)``."""
    if not eps > 0:
        raise ContractError("charbonnier eps must be > 0")
    x, y = as_tensor(x), as_tensor(y)
    _same_shape(x, y)
    d = ops.sub(x, y)
    return ops.mean(ops.sqrt(ops.add(ops.square(d), eps * eps)))


def laplacian(x) -> Tensor:
    """Per-channel 4-neighbour Laplacian of an NHWC image (reflect borders)."""
    x = as_tensor(x)
    k = np.repeat(LAPLACIAN[:, :, None], x.shape[-1], axis=2).astype(x.dtype)
    return conv2d(x, k, mode="depthwise3x3")


def edge_loss(x, y, eps: float = 1e-3) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _same_shape(x, y)
    return charbonnier(laplacian(x), laplacian(y), eps)


class RandomFeatureExtractor:
    """Frozen three-stage convolutional pyramid with seeded random weights.

    Stands in for a pretrained feature network; its weights are constants
    and never receive gradients.
    """

    widths = (8, 16, 32)

    def __init__(self, seed: int = 1234, in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.stages = []
        c_in = in_channels
        for i, c_out in enumerate(self.widths):
            w = rng.standard_normal((3, 3, c_in, c_out)) * np.sqrt(2.0 / (9 * c_in))
            b = rng.uniform(-0.05, 0.05, c_out)
            self.stages.append((w, b, 1 if i == 0 else 2))
            c_in = c_out
        self._cast = {}

    def _weights(self, dtype):
        key = np.dtype(dtype)
        if key not in self._cast:
            self._cast[key] = [(w.astype(key), b.astype(key), s) for w, b, s in self.stages]
        return self._cast[key]

    def features(self, x) -> list:
        x = as_tensor(x)
        feats = []
        h = x
        for w, b, stride in self._weights(x.dtype):
            if h.shape[1] < 2 or h.shape[2] < 2:
                break
            h = ops.relu(conv2d(h, w, b, mode="full3x3", stride=stride))
            feats.append(h)
        return feats


_default_extractor: Optional[RandomFeatureExtractor] = None


def default_extractor() -> RandomFeatureExtractor:
    global _default_extractor
    if _default_extractor is None:
        _default_extractor = RandomFeatureExtractor()
    return _default_extractor


def perceptual_loss(x, y, extractor: Optional[RandomFeatureExtractor] = None) -> Tensor:
    """Mean over stages of the mean squared feature difference."""
    x, y = as_tensor(x), as_tensor(y)
    _same_shape(x, y)
    extractor = extractor or default_extractor()
    fx, fy = extractor.features(x), extractor.features(y)
    terms = [ops.mean(ops.square(ops.sub(a, b))) for a, b in zip(fx, fy)]
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.div(total, float(len(terms)))


def loss_terms(pred, target, w: Optional[LossWeights] = None, extractor=None) -> dict:
    """All loss components as tensors, plus their weighted ``total``."""
    w = w or LossWeights()
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target)
    l_char = charbonnier(pred, target, w.eps_char)
    l_edge = edge_loss(pred, target, w.eps_char)
    total = ops.add(l_char, ops.mul(l_edge, w.lambda1))
    terms = {"l_char": l_char, "l_edge": l_edge}
    if w.lambda2 > 0:
        l_p = perceptual_loss(pred, target, extractor)
        total = ops.add(total, ops.mul(l_p, w.lambda2))
        terms["l_p"] = l_p
    else:
        terms["l_p"] = Tensor(np.zeros((), dtype=pred.dtype))
    terms["total"] = total
    return terms


def total_loss(pred, target, w: Optional[LossWeights] = None, extractor=None) -> Tensor:
    return loss_terms(pred, target, w, extractor)["total"]
