"""Differentiable primitives: elementwise maths, reductions and shape ops."""

from __future__ import annotations

import builtins
from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError, ShapeError
from .tensor import Tensor, as_tensor, needs_grad, record

LOG_FLOOR = 1e-8


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a} with {b}") from exc


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of trailing-dimension broadcast)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b):
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _broadcast_shape(a.shape, b.shape)
    return a, b


# ---------------------------------------------------------------- binary


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    out = a.data + b.data
    sa, sb = a.shape, b.shape
    return record("add", (a, b), out, lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    out = a.data - b.data
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), out, lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    ad, bd = a.data, b.data
    out = ad * bd
    na, nb = needs_grad(a, b)

    def vjp(g):
        return (
            unbroadcast(g * bd, ad.shape) if na else None,
            unbroadcast(g * ad, bd.shape) if nb else None,
        )

    return record("mul", (a, b), out, vjp)


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return record("div", (a, b), out, vjp)


# ----------------------------------------------------------------- unary


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", (a,), -a.data, lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a, floor: Optional[float] = None) -> Tensor:
    """Natural log.

    With ``floor=None`` (strict) a non-positive argument raises
    :class:`DomainError`. With a floor the argument is clamped from below and
    the clamped entries get zero gradient.
    """
    a = as_tensor(a)
    x = a.data
    if floor is None:
        if np.any(x <= 0):
            raise DomainError("log of a non-positive value")
        return record("log", (a,), np.log(x), lambda g: (g / x,))
    mask = x > floor
    xc = np.where(mask, x, np.asarray(floor, dtype=x.dtype))
    return record("log", (a,), np.log(xc), lambda g: (np.where(mask, g / xc, 0).astype(x.dtype),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return record("sigmoid", (a,), s, lambda g: (g * s * (1 - s),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    out = x * s
    return record("silu", (a,), out, lambda g: (g * (s * (1 + x * (1 - s))),))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0, x).astype(x.dtype, copy=False)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record("softplus", (a,), _softplus(x), lambda g: (g * _sigmoid(x),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    mask = x > 0
    return record("relu", (a,), np.where(mask, x, 0).astype(x.dtype), lambda g: (g * mask,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return record("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return record("square", (a,), x * x, lambda g: (2 * g * x,))


_UNARY = {
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "silu": silu,
    "softplus": softplus,
    "relu": relu,
    "sqrt": sqrt,
    "square": square,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch by name; binary kinds take ``b`` (tensor or scalar)."""
    if op_kind in _BINARY:
        if b is None:
            raise ShapeError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ------------------------------------------------------------ reductions


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (a,), out, vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        for ax in axes:
            if not -a.ndim <= ax < a.ndim:
                raise ShapeError(f"axis {ax} out of range for rank {a.ndim}")
        n = int(np.prod([a.shape[ax] for ax in axes]))
    shape = a.shape
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).astype(a.dtype),)

    return record("mean", (a,), out, vjp)


reduce_mean = mean


# ------------------------------------------------------------- shape ops


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    old = a.shape
    return record("reshape", (a,), out, lambda g: (g.reshape(old),))


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {a.ndim}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return record("permute", (a,), out, lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts))
        )

    return record("concat", ts, out, vjp)


def slice_axis(a, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop, step)
    idx = tuple(idx)
    out = a.data[idx]
    shape, dtype = a.shape, a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return record("slice", (a,), out, vjp)


def split(a, sizes: Sequence[int], axis: int = -1) -> list:
    a = as_tensor(a)
    if builtins.sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to extent {a.shape[axis]}")
    parts, start = [], 0
    for n in sizes:
        parts.append(slice_axis(a, axis, start, start + n))
        start += n
    return parts


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    out = np.flip(a.data, axis=axis).copy()
    return record("flip", (a,), out, lambda g: (np.flip(g, axis=axis).copy(),))


def crop(a, top: int, left: int, height: int, width: int) -> Tensor:
    """Spatial crop of an NHWC tensor."""
    a = slice_axis(a, 1, top, top + height)
    return slice_axis(a, 2, left, left + width)


def _reflect_adjoint(g: np.ndarray, axis: int, before: int, after: int, n: int) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    core = g[before : before + n].copy()
    if before:
        core[1 : before + 1] += g[:before][::-1]
    if after:
        core[n - 1 - after : n - 1] += g[before + n :][::-1]
    return np.moveaxis(core, 0, axis)


def reflect_pad(a, pads: Sequence[tuple]) -> Tensor:
    """Reflect-pad spatial axes 1 and 2 of an NHWC tensor.

    ``pads`` is ``((top, bottom), (left, right))``; each pad must be smaller
    than the extent it reflects.
    """
    a = as_tensor(a)
    (t, b), (l, r) = pads
    H, W = a.shape[1], a.shape[2]
    if max(t, b) >= H or max(l, r) >= W:
        raise ShapeError(f"reflect pad {pads} too large for extent {(H, W)}")
    if t == b == l == r == 0:
        return a
    width = [(0, 0)] * a.ndim
    width[1], width[2] = (t, b), (l, r)
    out = np.pad(a.data, width, mode="reflect")

    def vjp(g):
        g = _reflect_adjoint(g, 2, l, r, W)
        return (_reflect_adjoint(g, 1, t, b, H),)

    return record("reflect_pad", (a,), out, vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return record("softmax", (a,), y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def linear(x, w, bias=None) -> Tensor:
    """Contract the last axis of ``x`` with ``w`` of shape (K, M)."""
    x, w = as_tensor(x), as_tensor(w)
    K = x.shape[-1]
    if w.ndim != 2 or w.shape[0] != K:
        raise ShapeError(f"linear: input width {K} does not match weight {w.shape}")
    nx, nw = needs_grad(x, w)
    xd, wd = x.data, w.data
    out = xd @ wd

    def vjp(g):
        gx = g @ wd.T if nx else None
        gw = xd.reshape(-1, K).T @ g.reshape(-1, wd.shape[1]) if nw else None
        return gx, gw

    y = record("linear", (x, w), out, vjp)
    if bias is not None:
        y = add(y, bias)
    return y

