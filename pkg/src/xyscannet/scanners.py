"""Slice-and-scan operators over NHWC feature maps.

Intra scanners run the S6 layer along every row (horizontal) or column
(vertical) independently, folding the slice index into the batch axis.
Inter scanners average each slice to one descriptor, scan the descriptors
across slices and use the sigmoid of the result as a gate on the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor
from .errors import ShapeError
from .scan import ScanParams, s6_forward

AXES = ("horizontal", "vertical")
KINDS = ("intra", "inter")


@dataclass
class ScannerConfig:
    axis: str
    kind: str
    params: ScanParams

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def channels(self) -> int:
        return self.params.channels


def _check(F: Tensor, params: ScanParams):
    if F.ndim != 4:
        raise ShapeError(f"scanner expects (B, H, W, C) input, got {F.shape}")
    if F.shape[3] != params.channels:
        raise ShapeError(f"scanner over {params.channels} channels got {F.shape[3]}")


def intra_scan(F, axis: str, params: ScanParams, chunk: Optional[int] = None) -> Tensor:
    F = as_tensor(F)
    _check(F, params)
    B, H, W, D = F.shape
    if axis == "horizontal":
        seq = ops.reshape(F, (B * H, W, D))
        return ops.reshape(s6_forward(seq, params, chunk=chunk), (B, H, W, D))
    if axis == "vertical":
        seq = ops.reshape(ops.permute(F, (0, 2, 1, 3)), (B * W, H, D))
        out = ops.reshape(s6_forward(seq, params, chunk=chunk), (B, W, H, D))
        return ops.permute(out, (0, 2, 1, 3))
    raise ValueError(f"unknown axis {axis!r}")


def inter_gate(F, axis: str, params: ScanParams) -> Tensor:
    """Gate in (0, 1), constant along the pooled axis (kept as extent 1)."""
    F = as_tensor(F)
    _check(F, params)
    B, H, W, D = F.shape
    if axis == "vertical":
        pooled = ops.mean(F, axis=2)  # (B, H, D): one descriptor per row
        return ops.reshape(ops.sigmoid(s6_forward(pooled, params)), (B, H, 1, D))
    if axis == "horizontal":
        pooled = ops.mean(F, axis=1)  # (B, W, D): one descriptor per column
        return ops.reshape(ops.sigmoid(s6_forward(pooled, params)), (B, 1, W, D))
    raise ValueError(f"unknown axis {axis!r}")


def inter_scan(F, axis: str, params: ScanParams) -> Tensor:
    F = as_tensor(F)
    return ops.mul(inter_gate(F, axis, params), F)


def apply_scanner(F, cfg: ScannerConfig) -> Tensor:
    if cfg.kind == "intra":
        return intra_scan(F, cfg.axis, cfg.params)
    return inter_scan(F, cfg.axis, cfg.params)
