"""Central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tape, Tensor, backward


@dataclass
class GradcheckReport:
    max_rel_errors: list
    tol_rel: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tol_rel for e in self.max_rel_errors)

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_errors, default=0.0)

    def __str__(self) -> str:
        errs = ", ".join(f"{e:.2e}" for e in self.max_rel_errors)
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({'; '.join(self.failures)})" if self.failures else ""
        return f"{status} max rel err per input [{errs}] tol {self.tol_rel:g}{extra}"


def _projected(f, args, weights):
    out = f(*args)
    out = out if isinstance(out, Tensor) else Tensor(out)
    if weights is None:
        return out
    return ops.sum(ops.mul(out, weights))


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence,
    tol_rel: float = 1e-4,
    h: float = 1e-5,
    max_coords: int = 64,
    seed: int = 0,
) -> GradcheckReport:
    """Compare tape gradients of ``f`` with central differences.

    Non-scalar outputs are reduced to a scalar by a fixed random projection.
    Inputs larger than ``max_coords`` are checked on a random subset of
    coordinates. The relative error of a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` where the
    floor is 1% of the largest numeric entry of that input (and never below
    the round-off level of the finite difference), so entries that are
    vanishingly small next to their neighbours do not dominate the report.
    """
    rng = np.random.default_rng(seed)
    xs = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]

    probe = f(*[Tensor(x) for x in xs])
    probe = probe if isinstance(probe, Tensor) else Tensor(probe)
    if not np.all(np.isfinite(probe.data)):
        bad = np.argwhere(~np.isfinite(probe.data))[0]
        return GradcheckReport([float("inf")] * len(xs), tol_rel, [f"non-finite output at {tuple(bad)}"])
    weights = None if probe.size == 1 else Tensor(rng.standard_normal(probe.shape))

    with Tape() as tape:
        leaves = [tape.watch(x) for x in xs]
        s = _projected(f, leaves, weights)
    grads = backward(tape, s, leaves)
    s0 = abs(float(s.data.reshape(-1)[0]))

    max_errs, failures = [], []
    for k, x in enumerate(xs):
        analytic = grads[leaves[k]].reshape(-1)
        n = x.size
        coords = np.arange(n) if n <= max_coords else np.sort(rng.choice(n, max_coords, replace=False))
        numeric = np.empty(len(coords))
        for m, c in enumerate(coords):
            flat = x.reshape(-1)
            orig = flat[c]
            flat[c] = orig + h
            sp = _projected(f, [Tensor(v) for v in xs], weights).data.reshape(-1)[0]
            flat[c] = orig - h
            sm = _projected(f, [Tensor(v) for v in xs], weights).data.reshape(-1)[0]
            flat[c] = orig
            numeric[m] = (sp - sm) / (2 * h)
        if not np.all(np.isfinite(numeric)):
            where = int(coords[np.argmax(~np.isfinite(numeric))])
            failures.append(f"input {k}: non-finite finite-difference at flat index {where}")
            max_errs.append(float("inf"))
            continue
        a = analytic[coords]
        floor = max(1e-2 * float(np.abs(numeric).max(initial=0.0)), 1e-6 * max(1.0, s0))
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        max_errs.append(float(rel.max(initial=0.0)))
    return GradcheckReport(max_errs, tol_rel, failures)
