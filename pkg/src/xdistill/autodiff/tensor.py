"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation that touches a tensor with ``requires_grad``
appends a node to the active :class:`GradTape`.  :func:`backward` replays the
tape in reverse append order, so traversal is deterministic and gradients are
accumulated additively across fan-out.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "IndexedGrad",
    "tensor",
    "as_tensor",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "current_tape",
]


class IndexedGrad:
    """Gradient contribution that only touches ``parent[index]``.

    Returned by slicing rules so that the parent's full-size gradient buffer is
    allocated once instead of once per slice.
    """

    __slots__ = ("index", "value")

    def __init__(self, index, value: np.ndarray):
        self.index = index
        self.value = value


class _Node:
    __slots__ = ("out", "parents", "rule")

    def __init__(self, out: "Tensor", parents: tuple, rule: Callable):
        self.out = out
        self.parents = parents
        self.rule = rule


class GradTape:
    """Append-only record of executed differentiable operations."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: _Node) -> None:
        if self.consumed:
            raise RuntimeError("cannot record onto a tape that was already consumed by backward()")
        self.nodes.append(node)


_state = {"tape": GradTape(), "enabled": True}


def current_tape() -> GradTape:
    return _state["tape"]


def is_grad_enabled() -> bool:
    return _state["enabled"]


@contextlib.contextmanager
def no_grad():
    """Disable recording: results carry no graph and ``requires_grad=False``."""
    prev = _state["enabled"]
    _state["enabled"] = False
    try:
        yield
    finally:
        _state["enabled"] = prev


class Tensor:
    """n-dimensional float64 array that may participate in the gradient tape.

    ``data`` is a C-contiguous (row-major) ``numpy.ndarray``.  ``grad`` is
    ``None`` until a backward pass reaches the tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        # ascontiguousarray would promote 0-d input to shape (1,)
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self._tape: GradTape | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], rule: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out._node = None
        out._tape = None
        if _state["enabled"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            tape = _state["tape"]
            node = _Node(out, tuple(parents), rule)
            tape.record(node)
            out._node = node
            out._tape = tape
        else:
            out.requires_grad = False
        return out

    # -- introspection --------------------------------------------------------
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def tolist(self):
        return self.data.tolist()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operator sugar (implemented in ops) ---------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

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

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {list(t.shape)}")


def tensor(shape: Sequence[int], fill=0.0, requires_grad: bool = False) -> Tensor:
    """Create a row-major tensor of ``shape`` from a scalar fill or a flat value list."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"all dimensions must be positive, got {list(shape)}")
    count = math.prod(shape)
    if np.isscalar(fill):
        data = np.full(shape, float(fill))
    else:
        flat = np.asarray(fill, dtype=np.float64).reshape(-1)
        if flat.size != count:
            raise ValueError(f"shape {list(shape)} needs {count} values, got {flat.size}")
        data = flat.reshape(shape).copy()
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g) -> None:
    if isinstance(g, IndexedGrad):
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad[g.index] += g.value
        return
    if t.grad is None:
        # own the buffer: rules may return views of upstream gradients
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ``requires_grad`` ancestor of a scalar ``loss``.

    Consumes the tape that recorded ``loss``; a fresh tape becomes active for
    subsequent operations.  Calling this twice on the same graph is an error.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not require grad; nothing was recorded")
    tape = loss._tape
    if tape is None:
        # leaf scalar: d loss / d loss
        _accumulate(loss, np.ones_like(loss.data))
        return
    if tape.consumed:
        raise RuntimeError("backward() called twice on the same recorded graph")
    if not tape.nodes:
        raise RuntimeError("gradient tape is empty")
    tape.consumed = True
    if _state["tape"] is tape:
        _state["tape"] = GradTape()

    _accumulate(loss, np.ones_like(loss.data))
    nodes = tape.nodes
    for node in reversed(nodes):
        out = node.out
        g = out.grad
        if g is None:
            continue
        grads = node.rule(g)
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            _accumulate(parent, pg)
    # release saved activations held by closures
    for node in nodes:
        node.rule = None
        node.out._node = None
    tape.nodes = []


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
