"""
Dense tensor with tape-based reverse-mode differentiation.

Every operation that touches a tensor with requires_grad records its parents and a
closure mapping the output gradient to one gradient per parent. The tape is rebuilt
on each forward pass; backward() walks it in reverse topological order and
accumulates into leaf tensors (parameters and inputs created with requires_grad).
"""

import contextlib
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import NumericalError, ShapeError

Scalar = Union[int, float]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_default_dtype = np.float32
_grad_enabled = True


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Create tensors at the given precision inside the block (float32 or float64)."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = previous


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def check_finite(data: np.ndarray, op: str):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """n-dimensional array with an optional gradient slot."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        """Wrap an op result, recording it on the tape when any parent needs gradients."""
        check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # --- convenience ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{req})"

    # --- elementwise algebra ---
    def __add__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor._make(self.data + other, (self,), lambda g: (g,), "add")
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor._make(self.data - other, (self,), lambda g: (g,), "sub")
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
            "sub",
        )

    def __rsub__(self, other: Scalar) -> "Tensor":
        return Tensor._make(other - self.data, (self,), lambda g: (-g,), "rsub")

    def __mul__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        if not isinstance(other, Tensor):
            return Tensor._make(self.data * other, (self,), lambda g: (g * other,), "mul")
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> "Tensor":
        if isinstance(other, Tensor):
            raise ShapeError("division is only defined by a scalar")
        return Tensor._make(self.data / other, (self,), lambda g: (g / other,), "div")

    def square(self) -> "Tensor":
        x = self.data
        return Tensor._make(x * x, (self,), lambda g: (2.0 * x * g,), "square")

    # --- structural ---
    def __getitem__(self, index) -> "Tensor":
        """Basic (slice/int) indexing only; the gradient scatters back into place."""
        shape, dtype = self.shape, self.dtype

        def _backward(g):
            full = np.zeros(shape, dtype=dtype)
            full[index] += g
            return (full,)

        return Tensor._make(np.ascontiguousarray(self.data[index]), (self,), _backward, "getitem")

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(original),), "reshape")

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def _backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), _backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) / count


class Parameter(Tensor):
    """Learnable tensor with a stable name and an SGD momentum buffer."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.name = name
        self.momentum_buffer = np.zeros_like(self.data)

    def cast(self, dtype):
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.momentum_buffer = self.momentum_buffer.astype(dtype)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an existing axis."""
    if not tensors:
        raise ShapeError("concat() needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """
    Accumulate d(loss)/d(leaf) into every reachable leaf's grad.

    Intermediate tensors do not retain their gradients. Calling backward twice on
    the same graph without zeroing accumulates twice.

    Raises:
        ShapeError: if loss is not a scalar
    """
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad


def as_tensor(values: Iterable, dtype=None) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values, dtype=dtype)
