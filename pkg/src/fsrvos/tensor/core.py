"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation computes its forward value with numpy and, when
any input requires a gradient and recording is enabled, appends a node to the
active :class:`Tape`.  :func:`backward` walks the tape in reverse from a scalar
output and accumulates gradients into the ``grad`` buffers of leaf tensors.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

_ids = itertools.count()
_debug = False


class NonFiniteError(ArithmeticError):
    """Raised when a NaN or Inf is produced while debug checks are enabled."""


def set_debug(enabled: bool) -> None:
    """Toggle NaN/Inf detection on every operation output."""
    global _debug
    _debug = bool(enabled)


def debug_enabled() -> bool:
    return _debug


class Tensor:
    """A dense row-major array of 64-bit floats with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "id", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if _debug and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.id = next(_ids)
        self.is_leaf = True
        self.name = name

    @classmethod
    def _result(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.id = next(_ids)
        out.is_leaf = not requires_grad
        out.name = None
        if _debug and not np.all(np.isfinite(data)):
            raise NonFiniteError("operation produced non-finite values")
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; implementations live in ``ops``.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    out_id: int
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of executed operations.

    Nodes are appended in execution order, so each node's inputs were produced
    by earlier nodes (or are leaves).  The tape is not consumed by
    :meth:`backward`; replaying it again yields identical gradients.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self.nodes.append(_Node(out.id, inputs, backward))
        self._produced.add(out.id)

    def clear(self) -> None:
        self.nodes.clear()
        self._produced.clear()

    def backward(self, out: Tensor) -> None:
        if out.size != 1:
            raise ValueError(f"backward requires a scalar output, got shape {out.shape}")
        if not out.requires_grad:
            raise RuntimeError("output does not depend on any tensor requiring grad")
        if not out.is_leaf and out.id not in self._produced:
            raise RuntimeError("output was not recorded on this tape (tape cleared?)")

        pending: dict[int, np.ndarray] = {out.id: np.ones_like(out.data)}
        leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}
        if out.is_leaf:
            leaf_grads[out.id] = (out, pending.pop(out.id))

        for node in reversed(self.nodes):
            g = pending.pop(node.out_id, None)
            if g is None:
                continue
            for t, tg in zip(node.inputs, node.backward(g)):
                if tg is None or not t.requires_grad:
                    continue
                tg = _unbroadcast(tg, t.data.shape)
                if t.is_leaf:
                    prev = leaf_grads.get(t.id)
                    leaf_grads[t.id] = (t, tg if prev is None else prev[1] + tg)
                else:
                    prev = pending.get(t.id)
                    pending[t.id] = tg if prev is None else prev + tg

        for t, g in leaf_grads.values():
            t.grad = g.copy() if t.grad is None else t.grad + g


_tape = Tape()
_recording = True


def get_tape() -> Tape:
    return _tape


@contextlib.contextmanager
def tape_scope() -> Iterator[Tape]:
    """Use a fresh tape for the duration of the block."""
    global _tape
    saved = _tape
    _tape = Tape()
    try:
        yield _tape
    finally:
        _tape = saved


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _recording
    saved = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = saved


def is_recording() -> bool:
    return _recording


def make_result(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op's forward value and record it if any input needs a gradient."""
    needs = _recording and any(t.requires_grad for t in inputs)
    out = Tensor._result(data, needs)
    if needs:
        _tape.record(out, inputs, backward)
    return out


def backward(out: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from scalar ``out``."""
    _tape.backward(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)
