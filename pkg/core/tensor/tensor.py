"""Dense float64 tensors with tape-based reverse-mode differentiation.

Each op records its parents and a closure mapping the output gradient to the
parent gradients. ``backward`` walks the tape in reverse topological order and
frees it afterwards, so every training step builds a fresh graph.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from core.utils.errors import ContractError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_grad_mode = threading.local()

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording for the current thread."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        array = np.array(data, dtype=DTYPE)
        if not np.isfinite(array).all():
            raise NonFiniteError("tensor input contains NaN or Inf")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._prev: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        op: str,
        grad_fn: Optional[GradFn] = None,
    ) -> "Tensor":
        """Wrap an op result and, when recording, attach its gradient rule."""
        data = np.asarray(data, dtype=DTYPE)
        if not np.isfinite(data).all():
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out._backward = None
        track = (
            grad_fn is not None
            and is_grad_enabled()
            and any(p.requires_grad for p in parents)
        )
        out.requires_grad = track
        out._prev = tuple(parents) if track else ()
        if track:

            def _backward(grad: np.ndarray) -> None:
                for parent, parent_grad in zip(parents, grad_fn(grad)):
                    if parent_grad is not None:
                        parent._accumulate(parent_grad)

            out._backward = _backward
        return out

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad)

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE)
        else:
            self.grad = self.grad + grad

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __len__(self) -> int:
        return self.data.shape[0]

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            "add",
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-lift(other))

    def __rsub__(self, other) -> "Tensor":
        return lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = lift(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b,
            (self, other),
            "mul",
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = lift(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a / b,
            (self, other),
            "div",
            lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            ),
        )

    def __pow__(self, power: float) -> "Tensor":
        a = self.data
        return Tensor.from_op(
            a**power, (self,), "pow", lambda g: (g * power * a ** (power - 1),)
        )

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.ndim != 2 or other.ndim != 2:
            raise DimensionError(f"matmul needs 2-D operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise DimensionError(f"matmul inner extents differ: {self.shape} @ {other.shape}")
        a, b = self.data, other.data
        return Tensor.from_op(a @ b, (self, other), "matmul", lambda g: (g @ b.T, a.T @ g))

    # ------------------------------------------------------------------
    # shape ops
    # ------------------------------------------------------------------

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise DimensionError(f"transpose needs a 2-D tensor, got {self.shape}")
        return Tensor.from_op(self.data.T.copy(), (self,), "transpose", lambda g: (g.T,))

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(str(exc)) from exc
        return Tensor.from_op(data.copy(), (self,), "reshape", lambda g: (g.reshape(original),))

    def __getitem__(self, index) -> "Tensor":
        original = self.shape

        def grad_fn(g: np.ndarray):
            full = np.zeros(original, dtype=DTYPE)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(np.array(self.data[index]), (self,), "index", grad_fn)

    # ------------------------------------------------------------------
    # reductions and pointwise functions
    # ------------------------------------------------------------------

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        original = self.shape

        def grad_fn(g: np.ndarray):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, original).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", grad_fn)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return Tensor.from_op(y, (self,), "exp", lambda g: (g * y,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor.from_op(np.log(a), (self,), "log", lambda g: (g / a,))

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        return Tensor.from_op(y, (self,), "tanh", lambda g: (g * (1.0 - y * y),))

    def sigmoid(self) -> "Tensor":
        y = _stable_sigmoid(self.data)
        return Tensor.from_op(y, (self,), "sigmoid", lambda g: (g * y * (1.0 - y),))

    def softplus(self) -> "Tensor":
        a = self.data
        y = np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))
        return Tensor.from_op(y, (self,), "softplus", lambda g: (g * _stable_sigmoid(a),))

    def abs(self) -> "Tensor":
        a = self.data
        return Tensor.from_op(np.abs(a), (self,), "abs", lambda g: (g * np.sign(a),))

    def backward(self, params: Optional[Iterable["Tensor"]] = None) -> None:
        backward(self, params)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=DTYPE)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


def lift(value: Union[Tensor, np.ndarray, float, int]) -> Tensor:
    """Constants enter the tape as non-differentiable leaves."""
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    extents = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(extents)[:-1]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return Tensor.from_op(
        data,
        tuple(tensors),
        "concat",
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def _topological_order(root: Tensor) -> list:
    order: list = []
    visited: set = set()
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
        for parent in node._prev:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """Populate ``.grad`` on every tape participant reachable from ``loss``.

    Parameters listed in ``params`` that the loss never touched get a zero
    gradient. The tape is freed once gradients are propagated; a listed
    tensor that was itself an op result keeps its gradient and becomes a leaf.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params or ())
    requested = {id(p) for p in params}
    if loss.requires_grad:
        order = _topological_order(loss)
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node._prev:
                node._prev = ()
                node._backward = None
                if id(node) not in requested:
                    node.grad = None
                    node.requires_grad = False
        logger.debug("backward freed %d tape nodes", len(order))
    for param in params:
        if param.grad is None:
            param.grad = np.zeros_like(param.data)
