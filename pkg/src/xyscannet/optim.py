"""Adam with bias correction and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class CosineSchedule:
    lr0: float = 1e-4
    lr_min: float = 1e-7
    total_steps: int = 1

    def __call__(self, step: int) -> float:
        """Learning rate for the 0-based ``step``."""
        if self.total_steps <= 1:
            return self.lr0
        frac = min(step, self.total_steps - 1) / (self.total_steps - 1)
        return self.lr_min + 0.5 * (self.lr0 - self.lr_min) * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(weights: Mapping, grads: Mapping, state: OptimState, lr_schedule) -> tuple:
    """One bias-corrected Adam update; returns ``(new_weights, state)``.

    ``lr_schedule`` is a float or a callable of the 0-based step. Parameters
    without a gradient are carried over unchanged.
    """
    lr = lr_schedule(state.step) if callable(lr_schedule) else float(lr_schedule)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new = {}
    for k, w in weights.items():
        g = grads.get(k)
        if g is None:
            new[k] = w
            continue
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter {w.shape}")
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        upd = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new[k] = (w - upd).astype(w.dtype, copy=False)
    state.step = t
    return new, state
