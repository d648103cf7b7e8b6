"""NHWC convolutions, layer norm and resampling with reverse-mode rules."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import ContractError, ShapeError
from . import ops
from .tensor import Tensor, as_tensor, needs_grad, record

# Weight layouts:
#   pointwise     (C_in, C_out)
#   depthwise3x3  (3, 3, C)
#   full3x3       (3, 3, C_in, C_out)
CONV_MODES = ("pointwise", "depthwise3x3", "full3x3")


def _out_extent(n: int, stride: int) -> int:
    return (n - 3) // stride + 1


def _window(i: int, n_out: int, stride: int) -> slice:
    return slice(i, i + stride * (n_out - 1) + 1, stride)


def _depthwise_valid(xp: Tensor, w: Tensor, stride: int) -> Tensor:
    xd, wd = xp.data, w.data
    B, Hp, Wp, C = xd.shape
    Ho, Wo = _out_extent(Hp, stride), _out_extent(Wp, stride)
    out = np.zeros((B, Ho, Wo, C), dtype=np.result_type(xd, wd))
    for i in range(3):
        for j in range(3):
            out += xd[:, _window(i, Ho, stride), _window(j, Wo, stride), :] * wd[i, j]
    nx, nw = needs_grad(xp, w)

    def vjp(g):
        gx = np.zeros_like(xd) if nx else None
        gw = np.zeros_like(wd) if nw else None
        for i in range(3):
            for j in range(3):
                si, sj = _window(i, Ho, stride), _window(j, Wo, stride)
                if nx:
                    gx[:, si, sj, :] += g * wd[i, j]
                if nw:
                    gw[i, j] = np.einsum("bhwc,bhwc->c", g, xd[:, si, sj, :])
        return gx, gw

    return record("depthwise3x3", (xp, w), out, vjp)


def _full_valid(xp: Tensor, w: Tensor, stride: int) -> Tensor:
    xd, wd = xp.data, w.data
    B, Hp, Wp, Cin = xd.shape
    Cout = wd.shape[3]
    Ho, Wo = _out_extent(Hp, stride), _out_extent(Wp, stride)
    cols = np.concatenate(
        [xd[:, _window(i, Ho, stride), _window(j, Wo, stride), :] for i in range(3) for j in range(3)],
        axis=-1,
    )
    w2 = wd.reshape(9 * Cin, Cout)
    out = cols @ w2
    nx, nw = needs_grad(xp, w)

    def vjp(g):
        gx = gw = None
        if nx:
            gcols = (g @ w2.T).reshape(B, Ho, Wo, 9, Cin)
            gx = np.zeros_like(xd)
            k = 0
            for i in range(3):
                for j in range(3):
                    gx[:, _window(i, Ho, stride), _window(j, Wo, stride), :] += gcols[..., k, :]
                    k += 1
        if nw:
            gw = (cols.reshape(-1, 9 * Cin).T @ g.reshape(-1, Cout)).reshape(wd.shape)
        return gx, gw

    return record("conv3x3", (xp, w), out, vjp)


def conv2d(x, w, bias=None, mode: str = "pointwise", stride: int = 1, padding: str = "reflect") -> Tensor:
    """2-D convolution over an NHWC tensor.

    3x3 modes reflect-pad by one pixel on every side before the valid
    convolution, so stride 1 keeps the spatial extent and stride 2 halves
    even extents.
    """
    x, w = as_tensor(x), as_tensor(w)
    if mode not in CONV_MODES:
        raise ValueError(f"unknown conv mode {mode!r}")
    if stride not in (1, 2):
        raise ContractError(f"stride must be 1 or 2, got {stride}")
    if padding != "reflect":
        raise ContractError("only reflect padding is supported")
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input, got shape {x.shape}")
    C = x.shape[3]

    if mode == "pointwise":
        if w.ndim != 2 or w.shape[0] != C:
            raise ShapeError(f"pointwise weight {w.shape} does not accept {C} channels")
        if stride == 2:
            x = ops.slice_axis(ops.slice_axis(x, 1, 0, None, 2), 2, 0, None, 2)
        y = ops.linear(x, w)
    else:
        rank = 3 if mode == "depthwise3x3" else 4
        if w.ndim != rank or w.shape[:3] != (3, 3, C):
            raise ShapeError(f"{mode} weight {w.shape} does not accept {C} channels")
        if x.shape[1] < 2 or x.shape[2] < 2:
            raise ShapeError(f"spatial extent {x.shape[1:3]} smaller than the 3x3 kernel after padding")
        xp = ops.reflect_pad(x, ((1, 1), (1, 1)))
        y = _depthwise_valid(xp, w, stride) if mode == "depthwise3x3" else _full_valid(xp, w, stride)

    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (y.shape[-1],):
            raise ShapeError(f"bias shape {bias.shape} does not match {y.shape[-1]} output channels")
        y = ops.add(y, bias)
    return y


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel (last) axis at every location."""
    if not eps > 0:
        raise ContractError("layer_norm eps must be > 0")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    nx, ng, nb = needs_grad(x, gamma, beta)
    red = tuple(range(xd.ndim - 1))

    def vjp(g):
        gx = None
        if nx:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return (
            gx,
            (g * xhat).sum(axis=red) if ng else None,
            g.sum(axis=red) if nb else None,
        )

    return record("layer_norm", (x, gamma, beta), out, vjp)


@lru_cache(maxsize=64)
def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Half-pixel bilinear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.setflags(write=False)
    return m


def resize_bilinear(x, height: int, width: int) -> Tensor:
    x = as_tensor(x)
    B, H, W, C = x.shape
    if height < 1 or width < 1 or H < 1 or W < 1:
        raise ShapeError(f"cannot resize {(H, W)} to {(height, width)}")
    if (H, W) == (height, width):
        return x
    mh = interp_matrix(H, height, np.dtype(x.dtype))
    mw = interp_matrix(W, width, np.dtype(x.dtype))
    out = np.einsum("oh,bhwc->bowc", mh, x.data, optimize=True)
    out = np.einsum("pw,bowc->bopc", mw, out, optimize=True)

    def vjp(g):
        gi = np.einsum("pw,bopc->bowc", mw, g, optimize=True)
        return (np.einsum("oh,bowc->bhwc", mh, gi, optimize=True),)

    return record("resize_bilinear", (x,), out, vjp)


def pixel_shuffle(x, r: int = 2) -> Tensor:
    """(B, H, W, C*r*r) -> (B, H*r, W*r, C)."""
    x = as_tensor(x)
    B, H, W, Cr = x.shape
    if Cr % (r * r):
        raise ShapeError(f"channel count {Cr} not divisible by {r * r}")
    C = Cr // (r * r)
    y = ops.reshape(x, (B, H, W, C, r, r))
    y = ops.permute(y, (0, 1, 4, 2, 5, 3))
    return ops.reshape(y, (B, H * r, W * r, C))
