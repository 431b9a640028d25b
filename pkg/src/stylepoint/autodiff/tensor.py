"""Dense float32 tensors with a gradient tape.

Values are plain numpy arrays; every differentiable operation records a
node on the innermost active :class:`Tape`. Calling ``tape.backward(loss)``
replays the nodes in reverse recording order (recording order is a valid
topological order by construction) and returns a gradient for every leaf
tensor that requires one. Gradients accumulate additively when a tensor
feeds several operations, and each node's backward rule runs exactly once
per pass.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


_TAPE_STACK: list["Tape"] = []

# Production runs float32 end to end. Gradient tests flip this to float64
# so finite differences are checked without float32 forward noise; the op
# code paths are identical.
_DTYPE = np.float32


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense float32 array, optionally tracked for reverse-mode autodiff.

    ``requires_grad`` on a leaf marks it as a parameter; tensors produced
    by operations inherit it from their inputs (only while a tape is
    active, so inference outside a tape runs with no recording overhead).
    """

    __slots__ = ("data", "requires_grad", "_is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._is_leaf = True

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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the actual rules live in ops.py (imported lazily to
    # avoid a module cycle).
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

        return ops.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc_info):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> None:
        output._is_leaf = False
        self.nodes.append(_Node(inputs, output, backward_fn))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Reverse sweep from a scalar loss.

        Returns a map from each participating leaf tensor with
        ``requires_grad`` to its gradient (same shape as the tensor).
        Constants never appear in the map.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise ValueError("backward on an empty tape")

        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        leaf_grads: dict[Tensor, np.ndarray] = {}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            in_grads = node.backward_fn(g_out)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                g = g.astype(t.data.dtype, copy=False)
                if g.shape != t.data.shape:
                    raise ShapeError(
                        f"backward produced gradient of shape {g.shape} for input of shape {t.data.shape}"
                    )
                # accumulation allocates fresh arrays; single-use grads are
                # handed through as-is and treated as read-only downstream
                if t._is_leaf:
                    if t in leaf_grads:
                        leaf_grads[t] = leaf_grads[t] + g
                    else:
                        leaf_grads[t] = g
                else:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = g
        return leaf_grads


def record_op(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap an op result, recording it if a tape is active and any input needs grad."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record([t for t in inputs], out, backward_fn)
    return out
