"""
File: app/core/grad.py
Description: Minimal reverse-mode differentiation engine over float64 numpy
arrays. Every operation returns a Tensor; when an input requires gradients the
output keeps a reference to its inputs and a local backward rule, and
``backward`` replays that record in reverse topological order.
"""

# Standard Library Imports
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

# Third-Party Imports
import numpy as np

# Internal Imports
from app.core.errors import GraphError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Build no record inside the block (per thread)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """float64 array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    # ndarray <op> Tensor defers to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # --- introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # --- arithmetic ----------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return add(other, neg(self))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    # --- unary helpers -------------------------------------------------

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def square(self) -> "Tensor":
        return square(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def elu(self) -> "Tensor":
        return elu(self)

    def softplus(self) -> "Tensor":
        return softplus(self)

    def backward(self) -> "ComputationRecord":
        return backward(self)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


def _result(
    data: np.ndarray,
    parents: Tuple[Tensor, ...],
    backward_fn: BackwardFn,
    op: str,
) -> Tensor:
    # Constants never enter the record.
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(
            data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op
        )
    return Tensor(data, op=op)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} do not conform"
        ) from exc


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- elementwise binary ops ---------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def _backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), _backward, "add")


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "multiply")

    def _backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), _backward, "multiply")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "divide")

    def _backward(g: np.ndarray):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, (a, b), _backward, "divide")


def maximum(a: ArrayLike, floor: float) -> Tensor:
    """max(a, floor) against a constant; gradient passes where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    return _result(
        np.maximum(a.data, floor), (a,), lambda g: (g * mask,), "maximum"
    )


# --- linear algebra -------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def _backward(g: np.ndarray):
        if a.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), _backward, "matmul")


def affine(x: ArrayLike, weight: ArrayLike, bias: ArrayLike) -> Tensor:
    """x @ W + b for x of shape [in] or [batch, in]."""
    weight, bias = as_tensor(weight), as_tensor(bias)
    if bias.shape != (weight.shape[-1],):
        raise ShapeError(
            f"affine: bias shape {bias.shape} does not match weight {weight.shape}"
        )
    return add(matmul(x, weight), bias)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise ShapeError(f"concatenate: shapes {shapes} do not conform") from exc
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _backward(g: np.ndarray):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(data, tuple(parts), _backward, "concatenate")


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _result(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take(a: ArrayLike, index) -> Tensor:
    a = as_tensor(a)

    def _backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), _backward, "index")


# --- reductions -------------------------------------------------------------


def reduce_sum(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False):
    a = as_tensor(a)

    def _backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.array(np.broadcast_to(g, a.shape)),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), _backward, "sum")


def reduce_mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# --- elementwise unary ops ---------------------------------------------------


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def elu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    positive = a.data > 0
    out = np.where(positive, a.data, np.expm1(np.minimum(a.data, 0.0)))
    slope = np.where(positive, 1.0, out + 1.0)
    return _result(out, (a,), lambda g: (g * slope,), "elu")


def softplus(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    slope = _stable_sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * slope,), "softplus")


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), _backward, "softmax")


def log_softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def _backward(g: np.ndarray):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), _backward, "log_softmax")


def stop_gradient(a: ArrayLike) -> Tensor:
    """Same forward value, no path back to ``a`` or its ancestors."""
    a = as_tensor(a)
    return Tensor(a.data.copy(), op="stop_gradient")


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward ``hard`` exactly, backward as if the value were ``soft``."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError(
            f"straight_through: shapes {hard.shape} and {soft.shape} do not conform"
        )
    return _result(hard.copy(), (soft,), lambda g: (g,), "straight_through")


# --- the record ---------------------------------------------------------------


class ComputationRecord:
    """Topologically ordered nodes reachable from an output tensor."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def trace(cls, output: Tensor) -> "ComputationRecord":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
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
        return cls(order)

    def replay_backward(self, seed: np.ndarray) -> None:
        output = self.nodes[-1]
        pending: Dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = (
                    parent_grad if key not in pending else pending[key] + parent_grad
                )


def backward(loss: Tensor) -> ComputationRecord:
    """Accumulate d loss / d leaf into ``.grad`` of every leaf requiring it."""
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    record = ComputationRecord.trace(loss)
    if loss.requires_grad:
        record.replay_backward(np.ones_like(loss.data))
    return record
