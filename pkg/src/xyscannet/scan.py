"""Selective (input-dependent) state-space scan.

The recurrence ``h_t = a_t * h_{t-1} + b_t`` is evaluated either serially or
with a blocked prefix scan built on the associative composition of affine
maps ``h -> a*h + b``. On top sits the S6 layer: input-dependent step sizes,
zero-order-hold discretization, scan, and a linear readout with a skip gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor, needs_grad, record
from .errors import ContractError, DomainError, ShapeError

DEFAULT_STATE_DIM = 16


@dataclass
class ScanParams:
    """Learnable parameters of one S6 layer over ``D`` channels with ``N`` states.

    Fields hold NumPy arrays, or tensors when the layer runs on a tape.
    """

    a_log: object  # (D, N); A = -exp(a_log)
    b_proj: object  # (D, N), no bias
    c_proj: object  # (D, N), no bias
    delta_proj: object  # (D, D)
    delta_bias: object  # (D,)
    d_skip: object  # (D,)

    @property
    def channels(self) -> int:
        return int(np.shape(_raw(self.a_log))[0])

    @property
    def state_dim(self) -> int:
        return int(np.shape(_raw(self.a_log))[1])

    def items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    @classmethod
    def from_mapping(cls, m, prefix: str = "") -> "ScanParams":
        return cls(**{f.name: m[prefix + f.name] for f in fields(cls)})


def _raw(v):
    return v.data if isinstance(v, Tensor) else v


def init_scan_params(
    rng: np.random.Generator,
    channels: int,
    state_dim: int = DEFAULT_STATE_DIM,
    dtype=np.float32,
    dt_min: float = 1e-3,
    dt_max: float = 1e-1,
) -> ScanParams:
    D, N = channels, state_dim
    bound = D**-0.5
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=D))
    # inverse softplus, so softplus(delta_bias) == dt
    delta_bias = dt + np.log(-np.expm1(-dt))
    return ScanParams(
        a_log=np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (D, 1))).astype(dtype),
        b_proj=rng.uniform(-bound, bound, (D, N)).astype(dtype),
        c_proj=rng.uniform(-bound, bound, (D, N)).astype(dtype),
        delta_proj=rng.uniform(-bound, bound, (D, D)).astype(dtype),
        delta_bias=delta_bias.astype(dtype),
        d_skip=np.ones(D, dtype=dtype),
    )


# --------------------------------------------------------------- algebra


def compose(first, second):
    """Affine map ``second`` applied after ``first``: (a1,b1) then (a2,b2)."""
    a1, b1 = first
    a2, b2 = second
    return a1 * a2, a2 * b1 + b2


IDENTITY = (1.0, 0.0)


def _check_pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"scan coefficients {a.shape} and drives {b.shape} differ")
    if a.ndim == 0 or a.shape[0] < 1:
        raise ShapeError("scan needs at least one step")
    return a, b


def scan_sequential(a, b, h0=0.0) -> np.ndarray:
    """Reference O(L) evaluation along axis 0."""
    a, b = _check_pair(a, b)
    h = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    prev = np.broadcast_to(np.asarray(h0, dtype=h.dtype), h.shape[1:])
    for t in range(a.shape[0]):
        prev = a[t] * prev + b[t]
        h[t] = prev
    return h


def _exclusive_tree_scan(a: np.ndarray, b: np.ndarray):
    """Blelloch up-sweep/down-sweep exclusive scan of affine maps along axis 0."""
    n = a.shape[0]
    size = 1 << max(0, (n - 1).bit_length())
    pa = np.ones((size,) + a.shape[1:], dtype=a.dtype)
    pb = np.zeros((size,) + b.shape[1:], dtype=b.dtype)
    pa[:n], pb[:n] = a, b

    step = 1
    while step < size:
        right = slice(2 * step - 1, size, 2 * step)
        left = slice(step - 1, size, 2 * step)
        pa[right], pb[right] = compose((pa[left], pb[left]), (pa[right], pb[right]))
        step *= 2

    pa[-1], pb[-1] = 1, 0
    step = size // 2
    while step >= 1:
        right = slice(2 * step - 1, size, 2 * step)
        left = slice(step - 1, size, 2 * step)
        la, lb = pa[left].copy(), pb[left].copy()
        pa[left], pb[left] = pa[right], pb[right]
        pa[right], pb[right] = compose((pa[right], pb[right]), (la, lb))
        step //= 2
    return pa[:n], pb[:n]


def scan_parallel(a, b, h0=0.0, chunk: Optional[int] = None) -> np.ndarray:
    """Blocked prefix scan along axis 0; matches :func:`scan_sequential`.

    Each chunk is scanned locally (all chunks at once), the chunk totals are
    combined by a work-efficient tree scan in a fixed order, and the
    resulting carries are folded back into every chunk.
    """
    a, b = _check_pair(a, b)
    L = a.shape[0]
    if chunk is None:
        chunk = max(1, math.isqrt(L))
    if chunk < 1:
        raise ContractError("chunk must be >= 1")
    chunk = min(chunk, L)
    n_chunks = -(-L // chunk)
    pad = n_chunks * chunk - L
    dtype = np.result_type(a, b)
    rest = a.shape[1:]
    if pad:
        a = np.concatenate([a, np.ones((pad,) + rest, dtype=a.dtype)])
        b = np.concatenate([b, np.zeros((pad,) + rest, dtype=b.dtype)])
    a = a.reshape((n_chunks, chunk) + rest)
    b = b.reshape((n_chunks, chunk) + rest)

    loc_a = np.empty(a.shape, dtype=dtype)
    loc_b = np.empty(b.shape, dtype=dtype)
    loc_a[:, 0], loc_b[:, 0] = a[:, 0], b[:, 0]
    for t in range(1, chunk):
        loc_a[:, t], loc_b[:, t] = compose((loc_a[:, t - 1], loc_b[:, t - 1]), (a[:, t], b[:, t]))

    pa, pb = _exclusive_tree_scan(loc_a[:, -1], loc_b[:, -1])
    carry = pa * np.asarray(h0, dtype=dtype) + pb
    h = loc_a * carry[:, None] + loc_b
    return h.reshape((n_chunks * chunk,) + rest)[:L]


def run_scan(a, b, h0=0.0, method: str = "parallel", chunk: Optional[int] = None, axis: int = 0):
    a_t, b_t = np.moveaxis(a, axis, 0), np.moveaxis(b, axis, 0)
    if method == "parallel":
        h = scan_parallel(a_t, b_t, h0, chunk)
    elif method == "sequential":
        h = scan_sequential(a_t, b_t, h0)
    else:
        raise ValueError(f"unknown scan method {method!r}")
    return np.moveaxis(h, 0, axis)


# ----------------------------------------------------------- S6 layer


def discretize(delta, a_log, B, x):
    """Zero-order hold: ``a_bar = exp(delta*A)``, ``b_bar = delta*B*x``.

    Shapes: delta, x (..., L, D); a_log (D, N); B (..., L, N). Returns two
    arrays of shape (..., L, D, N).
    """
    delta, a_log, B, x = (np.asarray(_raw(v)) for v in (delta, a_log, B, x))
    if np.any(delta <= 0):
        raise ContractError("discretize requires delta > 0")
    A = -np.exp(a_log)
    a_bar = np.exp(delta[..., None] * A)
    b_bar = (delta * x)[..., None] * B[..., None, :]
    return a_bar, b_bar


def selective_scan(delta, A, B, C, x, method: str = "parallel", chunk: Optional[int] = None) -> Tensor:
    """Core scan ``y_t = <C_t, h_t>`` with ``h_t = exp(delta_t A) h_{t-1} + delta_t B_t x_t``.

    delta, x: (Bt, L, D); A: (D, N) negative; B, C: (Bt, L, N). The backward
    rule runs the adjoint recurrence as a reversed scan instead of taping
    every time step.
    """
    delta, A, B, C, x = (as_tensor(v) for v in (delta, A, B, C, x))
    dd, Ad, Bd, Cd, xd = delta.data, A.data, B.data, C.data, x.data
    if dd.shape != xd.shape or Bd.shape != Cd.shape or Bd.shape[:-1] != xd.shape[:-1]:
        raise ShapeError(f"selective_scan shapes delta{dd.shape} x{xd.shape} B{Bd.shape} C{Cd.shape}")
    if Ad.shape != (xd.shape[-1], Bd.shape[-1]):
        raise ShapeError(f"state matrix {Ad.shape} does not match D={xd.shape[-1]}, N={Bd.shape[-1]}")

    a_bar = np.exp(dd[..., None] * Ad)
    dx = dd * xd
    b_bar = dx[..., None] * Bd[..., None, :]
    h = run_scan(a_bar, b_bar, 0.0, method, chunk, axis=-3)
    y = np.einsum("bldn,bln->bld", h, Cd, optimize=True)
    need = needs_grad(delta, A, B, C, x)

    def vjp(gy):
        gh = gy[..., None] * Cd[..., None, :]
        # lam_t = gh_t + a_{t+1} lam_{t+1}, run as a forward scan on reversed time
        a_next = np.zeros_like(a_bar)
        a_next[:, :-1] = a_bar[:, 1:]
        lam = run_scan(a_next[:, ::-1], gh[:, ::-1], 0.0, method, chunk, axis=-3)[:, ::-1]
        h_prev = np.zeros_like(h)
        h_prev[:, 1:] = h[:, :-1]
        g_expo = lam * h_prev * a_bar
        lamB = np.einsum("bldn,bln->bld", lam, Bd, optimize=True)
        g_delta = np.einsum("bldn,dn->bld", g_expo, Ad, optimize=True) + lamB * xd
        gA = np.einsum("bldn,bld->dn", g_expo, dd, optimize=True) if need[1] else None
        gB = np.einsum("bldn,bld->bln", lam, dx, optimize=True) if need[2] else None
        gC = np.einsum("bld,bldn->bln", gy, h, optimize=True) if need[3] else None
        gx = lamB * dd if need[4] else None
        return g_delta, gA, gB, gC, gx

    return record("selective_scan", (delta, A, B, C, x), y, vjp)


def s6_forward(x, p: ScanParams, method: str = "parallel", chunk: Optional[int] = None, strict: bool = True) -> Tensor:
    """S6 layer over sequences ``x`` of shape (Bt, L, D); causal along L."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"s6_forward expects (batch, length, channels), got {x.shape}")
    if x.shape[-1] != p.channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, scan params have {p.channels}")
    if strict and not np.all(np.isfinite(x.data)):
        raise DomainError("non-finite input to s6_forward")
    delta = ops.softplus(ops.linear(x, p.delta_proj, p.delta_bias))
    B = ops.linear(x, p.b_proj)
    C = ops.linear(x, p.c_proj)
    A = ops.neg(ops.exp(p.a_log))
    y = selective_scan(delta, A, B, C, x, method, chunk)
    return ops.add(y, ops.mul(x, p.d_skip))
