"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` is a thin immutable wrapper over a NumPy array. A tensor
takes part in differentiation only when it carries a ``tape_id`` issued by
the :class:`Tape` that is currently active; everything else is a constant.

Typical use::

    with Tape() as tape:
        x = tape.watch(np.array([2.0, -3.0]))
        loss = ops.sum(ops.mul(x, x))
    grads = backward(tape, loss)
    grads[x]  # -> array([ 4., -6.])
"""

from __future__ import annotations

import contextvars
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ContractError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_id_counter = itertools.count(1)
_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "xyscannet_active_tape", default=None
)


class Tensor:
    """Row-major N-D array with an optional link to a recorded computation."""

    __slots__ = ("data", "tape_id")
    __array_priority__ = 100

    def __init__(self, data, dtype=None, tape_id: Optional[int] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.tape_id = tape_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", tape_id={self.tape_id}" if self.tape_id is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Operator sugar; the implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    """Wrap arrays and scalars; scalars adopt the dtype of ``like``."""
    if isinstance(x, Tensor):
        return x
    if like is not None and np.ndim(x) == 0:
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


@dataclass
class Node:
    kind: str
    input_ids: tuple
    output_id: int
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is a valid topological
    order; :func:`backward` walks them once in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._known: set[int] = set()
        self._leaves: set[int] = set()
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def watch(self, x) -> Tensor:
        """Return a leaf tensor sharing ``x``'s data that receives gradients."""
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        t = Tensor(data)
        t.tape_id = next(_id_counter)
        self._known.add(t.tape_id)
        self._leaves.add(t.tape_id)
        return t

    def owns(self, t: Tensor) -> bool:
        return t.tape_id is not None and t.tape_id in self._known

    def record(self, kind: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
        ids = tuple(t.tape_id if self.owns(t) else None for t in inputs)
        if all(i is None for i in ids):
            return Tensor(out)
        t = Tensor(out)
        t.tape_id = next(_id_counter)
        self._known.add(t.tape_id)
        self.nodes.append(Node(kind, ids, t.tape_id, vjp))
        return t


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def needs_grad(*inputs: Tensor) -> tuple:
    """Per-input flags telling an op which input gradients are worth computing."""
    tape = _active_tape.get()
    if tape is None:
        return (False,) * len(inputs)
    return tuple(tape.owns(t) for t in inputs)


def record(kind: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
    tape = _active_tape.get()
    if tape is None:
        return Tensor(out)
    return tape.record(kind, inputs, out, vjp)


class Gradients:
    """Mapping from watched leaves to d(root)/d(leaf)."""

    def __init__(self, by_id: dict):
        self._by_id = by_id

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.tape_id is None or t.tape_id not in self._by_id:
            raise KeyError("tensor did not receive a gradient")
        return self._by_id[t.tape_id]

    def get(self, t: Tensor, default=None):
        if t.tape_id is None:
            return default
        return self._by_id.get(t.tape_id, default)

    def __contains__(self, t: Tensor) -> bool:
        return t.tape_id is not None and t.tape_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)


def backward(tape: Tape, root: Tensor, leaves: Optional[Iterable[Tensor]] = None) -> Gradients:
    """Reverse sweep from a scalar ``root``.

    Every watched leaf the root depends on receives a gradient; leaves it does
    not depend on receive zeros. Constants never appear in the result.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be a scalar, got shape {root.shape}")
    if not tape.owns(root):
        raise ContractError("backward root was not produced on this tape")

    grads: dict[int, np.ndarray] = {root.tape_id: np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.output_id)
        if g is None:
            continue
        if node.output_id not in tape._leaves:
            del grads[node.output_id]
        in_grads = node.vjp(g)
        for tid, gi in zip(node.input_ids, in_grads):
            if tid is None or gi is None:
                continue
            prev = grads.get(tid)
            grads[tid] = gi if prev is None else prev + gi

    result = {tid: g for tid, g in grads.items() if tid in tape._leaves}
    if leaves is not None:
        for leaf in leaves:
            if leaf.tape_id is not None and leaf.tape_id not in result:
                result[leaf.tape_id] = np.zeros_like(leaf.data)
    return Gradients(result)
