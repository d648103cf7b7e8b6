"""Network blocks: gated state-space module, gated feed-forward, level fusion."""

from __future__ import annotations

import typing
from dataclasses import dataclass, fields, is_dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import conv2d, layer_norm, ops, resize_bilinear
from .autodiff.tensor import Tensor, as_tensor
from .errors import DomainError, ShapeError
from .scan import ScanParams, init_scan_params
from .scanners import inter_scan, intra_scan

KL_FLOOR = 1e-8
GDFN_RATIO = 2.66


# ------------------------------------------------------------ containers


@dataclass
class Norm:
    gamma: object
    beta: object


@dataclass
class Pointwise:
    w: object  # (C_in, C_out)
    b: object = None  # (C_out,) or None


@dataclass
class Conv3:
    w: object  # (3, 3, C_in, C_out)
    b: object = None


@dataclass
class VssmWeights:
    norm: Norm
    w_point: object  # (C, 2C)
    w_depth: object  # (3, 3, 2C)
    scanner_v: ScanParams
    scanner_h: ScanParams
    w_out: object = None  # (C, C) or None when the output projection is off


@dataclass
class GdfnWeights:
    norm: Norm
    expand: object  # (C, 2*hidden)
    depth: object  # (3, 3, 2*hidden)
    project: object  # (hidden, C)


@dataclass
class FusionWeights:
    proj_cur: Pointwise
    proj_oth1: Pointwise
    proj_oth2: Pointwise
    merge: Pointwise  # (2*C_cur, C_cur)


@dataclass
class AffWeights:
    fuse: Pointwise  # (sum of source channels, C_cur)
    conv: Conv3


def flatten(obj, prefix: str = "") -> dict:
    """Nested weight dataclasses -> ``{"a/b/c": array}``; ``None`` leaves are dropped."""
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(v):
            out.update(flatten(v, key + "/"))
        elif v is not None:
            out[key] = v
    return out


def unflatten(cls, mapping, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in fields(cls):
        key = prefix + f.name
        sub = hints.get(f.name)
        if isinstance(sub, type) and is_dataclass(sub):
            kwargs[f.name] = unflatten(sub, mapping, key + "/")
        elif key in mapping:
            kwargs[f.name] = mapping[key]
        elif f.default is None:
            kwargs[f.name] = None
        else:
            raise KeyError(key)
    return cls(**kwargs)


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def init_norm(C, dtype=np.float32) -> Norm:
    return Norm(np.ones(C, dtype=dtype), np.zeros(C, dtype=dtype))


def init_pointwise(rng, c_in, c_out, bias=True, dtype=np.float32) -> Pointwise:
    return Pointwise(
        _uniform(rng, c_in, (c_in, c_out), dtype),
        _uniform(rng, c_in, (c_out,), dtype) if bias else None,
    )


def init_conv3(rng, c_in, c_out, bias=True, dtype=np.float32) -> Conv3:
    return Conv3(
        _uniform(rng, 9 * c_in, (3, 3, c_in, c_out), dtype),
        _uniform(rng, 9 * c_in, (c_out,), dtype) if bias else None,
    )


def gdfn_hidden(C: int, ratio: float = GDFN_RATIO) -> int:
    """Hidden width ``ratio*C`` rounded to an even channel count."""
    return max(2, 2 * int(round(C * ratio / 2)))


def init_vssm(rng, C, state_dim=16, out_proj=True, dtype=np.float32) -> VssmWeights:
    if C % 2:
        raise ShapeError(f"VSSM needs an even channel count, got {C}")
    return VssmWeights(
        norm=init_norm(C, dtype),
        w_point=_uniform(rng, C, (C, 2 * C), dtype),
        w_depth=_uniform(rng, 9, (3, 3, 2 * C), dtype),
        scanner_v=init_scan_params(rng, C // 2, state_dim, dtype),
        scanner_h=init_scan_params(rng, C // 2, state_dim, dtype),
        w_out=_uniform(rng, C, (C, C), dtype) if out_proj else None,
    )


def init_gdfn(rng, C, ratio=GDFN_RATIO, dtype=np.float32) -> GdfnWeights:
    hidden = gdfn_hidden(C, ratio)
    return GdfnWeights(
        norm=init_norm(C, dtype),
        expand=_uniform(rng, C, (C, 2 * hidden), dtype),
        depth=_uniform(rng, 9, (3, 3, 2 * hidden), dtype),
        project=_uniform(rng, hidden, (hidden, C), dtype),
    )


def init_dgff(rng, c_cur, c_oth1, c_oth2, dtype=np.float32) -> FusionWeights:
    return FusionWeights(
        proj_cur=init_pointwise(rng, c_cur, c_cur, dtype=dtype),
        proj_oth1=init_pointwise(rng, c_oth1, c_cur, dtype=dtype),
        proj_oth2=init_pointwise(rng, c_oth2, c_cur, dtype=dtype),
        merge=init_pointwise(rng, 2 * c_cur, c_cur, dtype=dtype),
    )


def init_aff(rng, c_cur, c_oth1, c_oth2, dtype=np.float32) -> AffWeights:
    return AffWeights(
        fuse=init_pointwise(rng, c_cur + c_oth1 + c_oth2, c_cur, dtype=dtype),
        conv=init_conv3(rng, c_cur, c_cur, dtype=dtype),
    )


# --------------------------------------------------------------- forward


def pointwise(x, p: Pointwise) -> Tensor:
    return conv2d(x, p.w, p.b, mode="pointwise")


def gated_scan_block(X, w: VssmWeights, dual_scanner: Callable[[Tensor], Tensor]) -> Tensor:
    """LN -> pointwise -> depthwise -> split (Y, F) -> out(SiLU(Y) * scan(F)) + X."""
    X = as_tensor(X)
    C = X.shape[-1]
    h = layer_norm(X, w.norm.gamma, w.norm.beta)
    h = conv2d(h, w.w_point, mode="pointwise")
    h = conv2d(h, w.w_depth, mode="depthwise3x3")
    Y, F = ops.split(h, [C, C], axis=-1)
    z = ops.mul(ops.silu(Y), dual_scanner(F))
    if w.w_out is not None:
        z = conv2d(z, w.w_out, mode="pointwise")
    return ops.add(z, X)


def dual_scanner(F, w: VssmWeights, kind: str) -> Tensor:
    C = F.shape[-1]
    F_v, F_h = ops.split(F, [C // 2, C // 2], axis=-1)
    if kind == "intra":
        out_v = intra_scan(F_v, "vertical", w.scanner_v)
        out_h = intra_scan(F_h, "horizontal", w.scanner_h)
    elif kind == "inter":
        out_v = inter_scan(F_v, "vertical", w.scanner_v)
        out_h = inter_scan(F_h, "horizontal", w.scanner_h)
    else:
        raise ValueError(f"unknown scanner kind {kind!r}")
    return ops.concat([out_v, out_h], axis=-1)


def vssm_forward(X, w: VssmWeights, kind: str = "intra") -> Tensor:
    X = as_tensor(X)
    if X.shape[-1] % 2:
        raise ShapeError(f"VSSM needs an even channel count, got {X.shape[-1]}")
    return gated_scan_block(X, w, lambda F: dual_scanner(F, w, kind))


def gdfn_forward(X, w: GdfnWeights) -> Tensor:
    X = as_tensor(X)
    hidden = w.project.shape[0]
    h = layer_norm(X, w.norm.gamma, w.norm.beta)
    h = conv2d(h, w.expand, mode="pointwise")
    h = conv2d(h, w.depth, mode="depthwise3x3")
    gate, value = ops.split(h, [hidden, hidden], axis=-1)
    h = ops.mul(ops.silu(gate), value)
    return ops.add(conv2d(h, w.project, mode="pointwise"), X)


def kl_divergence(p_in, p_ref, axis: int = -1) -> Tensor:
    """``sum p_ref * (log p_ref - log p_in)`` with logs floored at 1e-8."""
    lr = ops.log(p_ref, floor=KL_FLOOR)
    li = ops.log(p_in, floor=KL_FLOOR)
    return ops.sum(ops.mul(p_ref, ops.sub(lr, li)), axis=axis, keepdims=True)


def kl_gate(y_in, y_ref) -> Tensor:
    """Sigmoid of the per-location channel KL divergence; shape (..., 1)."""
    y_in, y_ref = as_tensor(y_in), as_tensor(y_ref)
    if y_in.shape != y_ref.shape:
        raise ShapeError(f"kl_gate shapes differ: {y_in.shape} vs {y_ref.shape}")
    if not (np.all(np.isfinite(y_in.data)) and np.all(np.isfinite(y_ref.data))):
        raise DomainError("non-finite input to kl_gate")
    d = kl_divergence(ops.softmax(y_in, -1), ops.softmax(y_ref, -1))
    # the log floor can push a near-zero divergence a few ulps below 0
    return ops.sigmoid(ops.relu(d))


def _resized(x, H, W) -> Tensor:
    x = as_tensor(x)
    if x.shape[1] < 1 or x.shape[2] < 1 or H < 1 or W < 1:
        raise ShapeError(f"fusion source {x.shape} has no spatial extent")
    return resize_bilinear(x, H, W)


def dgff_project(X_cur, X_oth1, X_oth2, w: FusionWeights):
    X_cur = as_tensor(X_cur)
    H, W = X_cur.shape[1], X_cur.shape[2]
    cur = pointwise(_resized(X_cur, H, W), w.proj_cur)
    o1 = pointwise(_resized(X_oth1, H, W), w.proj_oth1)
    o2 = pointwise(_resized(X_oth2, H, W), w.proj_oth2)
    return cur, o1, o2


def dgff_fuse(X_cur, X_oth1, X_oth2, w: FusionWeights) -> Tensor:
    """Input to the merge projection: ``(g1*X1' + g2*X2') || X_cur'``."""
    cur, o1, o2 = dgff_project(X_cur, X_oth1, X_oth2, w)
    gated = ops.add(ops.mul(kl_gate(o1, cur), o1), ops.mul(kl_gate(o2, cur), o2))
    return ops.concat([gated, cur], axis=-1)


def dgff_forward(X_cur, X_oth1, X_oth2, w: FusionWeights) -> Tensor:
    return pointwise(dgff_fuse(X_cur, X_oth1, X_oth2, w), w.merge)


def aff_forward(X_cur, X_oth1, X_oth2, w: AffWeights) -> Tensor:
    """Baseline fusion: concat resized sources -> 1x1 conv -> ReLU -> 3x3 conv."""
    X_cur = as_tensor(X_cur)
    H, W = X_cur.shape[1], X_cur.shape[2]
    cat = ops.concat([X_cur, _resized(X_oth1, H, W), _resized(X_oth2, H, W)], axis=-1)
    h = ops.relu(pointwise(cat, w.fuse))
    return conv2d(h, w.conv.w, w.conv.b, mode="full3x3")


def as_tensors(obj, convert: Optional[Callable] = None):
    """Rebuild a weight dataclass with every leaf passed through ``convert``."""
    convert = convert or as_tensor
    flat = {k: convert(v) for k, v in flatten(obj).items()}
    return unflatten(type(obj), flat)
