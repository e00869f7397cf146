"""Reverse-mode automatic differentiation on dense float64 arrays.

A ``Tensor`` wraps a numpy array plus an optional gradient. Operations on
tensors that require gradients record a computation graph; calling
``backward()`` on a scalar result fills ``.grad`` on every tensor that
contributed to it. Every op checks its result for NaN/Inf and raises
``NumericError`` immediately, so numerical failures surface at the op that
caused them rather than corrupting downstream state.

Only the ops the package's networks and losses need are implemented:
elementwise arithmetic with broadcasting, 2-D matmul/transpose, reductions,
exp/log/sqrt/abs/relu, concatenation, pair gathering and segment sums.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError, UsageError


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {context}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None,
                 _context: str = "tensor creation"):
        self.data = _as_array(data)
        _check_finite(self.data, _context)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def as_tensor(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing --------------------------------------------------------

    @staticmethod
    def _result(data, parents, backward, context) -> "Tensor":
        tracked = any(p.requires_grad for p in parents)
        if not tracked:
            return Tensor(data, _context=context)
        return Tensor(data, requires_grad=True, _parents=tuple(parents),
                      _backward=backward, _context=context)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Backpropagate from a scalar; fills ``.grad`` on contributing tensors."""
        if self.data.size != 1:
            raise UsageError("backward() may only be called on a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        out_data = self.data + other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad, other.shape))

        return Tensor._result(out_data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(grad):
            self._accumulate(-grad)

        return Tensor._result(-self.data, (self,), backward, "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor.as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor.as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        out_data = self.data * other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad * self.data, other.shape))

        return Tensor._result(out_data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = self.data / other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-grad * self.data / (other.data ** 2),
                                               other.shape))

        return Tensor._result(out_data, (self, other), backward, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor.as_tensor(other) / self

    def __matmul__(self, other) -> "Tensor":
        other = Tensor.as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise DimensionError("matmul expects 2-D tensors")
        if self.shape[1] != other.shape[0]:
            raise DimensionError(
                f"matmul shapes incompatible: {self.shape} @ {other.shape}")
        out_data = self.data @ other.data

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ grad)

        return Tensor._result(out_data, (self, other), backward, "matmul")

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise DimensionError("transpose expects a 2-D tensor")

        def backward(grad):
            self._accumulate(grad.T)

        return Tensor._result(self.data.T, (self,), backward, "transpose")

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        in_shape = self.shape

        def backward(grad):
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, in_shape).copy())

        return Tensor._result(out_data, (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        total = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / total)

    # -- elementwise functions ---------------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(grad):
            self._accumulate(grad * out_data)

        return Tensor._result(out_data, (self,), backward, "exp")

    def log(self) -> "Tensor":
        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = np.log(self.data)

        def backward(grad):
            self._accumulate(grad / self.data)

        return Tensor._result(out_data, (self,), backward, "log")

    def sqrt(self) -> "Tensor":
        with np.errstate(invalid="ignore"):
            out_data = np.sqrt(self.data)

        def backward(grad):
            self._accumulate(grad * 0.5 / out_data)

        return Tensor._result(out_data, (self,), backward, "sqrt")

    def square(self) -> "Tensor":
        return self * self

    def abs(self) -> "Tensor":
        # subgradient at 0 is defined as 0
        out_data = np.abs(self.data)
        sign = np.sign(self.data)

        def backward(grad):
            self._accumulate(grad * sign)

        return Tensor._result(out_data, (self,), backward, "abs")

    def relu(self) -> "Tensor":
        mask = (self.data > 0).astype(np.float64)

        def backward(grad):
            self._accumulate(grad * mask)

        return Tensor._result(self.data * mask, (self,), backward, "relu")

    # -- structural ops ----------------------------------------------------------

    def take_pairs(self, rows: np.ndarray, cols: np.ndarray) -> "Tensor":
        """Gather ``self[rows[k], cols[k]]`` into a 1-D tensor."""
        if self.ndim != 2:
            raise DimensionError("take_pairs expects a 2-D tensor")
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        out_data = self.data[rows, cols]
        in_shape = self.shape

        def backward(grad):
            # bincount scatter-add: much faster than np.add.at for many pairs
            flat = np.bincount(rows * in_shape[1] + cols, weights=grad,
                               minlength=in_shape[0] * in_shape[1])
            self._accumulate(flat.reshape(in_shape))

        return Tensor._result(out_data, (self,), backward, "take_pairs")

    def segment_sum(self, segment_ids: np.ndarray, num_segments: int) -> "Tensor":
        """Sum a 1-D tensor into ``num_segments`` buckets given per-element ids."""
        if self.ndim != 1:
            raise DimensionError("segment_sum expects a 1-D tensor")
        segment_ids = np.asarray(segment_ids, dtype=np.intp)
        if segment_ids.shape != self.shape:
            raise DimensionError("segment_ids must match tensor length")
        out_data = np.bincount(segment_ids, weights=self.data,
                               minlength=num_segments).astype(np.float64)

        def backward(grad):
            self._accumulate(grad[segment_ids])

        return Tensor._result(out_data, (self,), backward, "segment_sum")


def concat(tensors: list, axis: int = 1) -> Tensor:
    """Concatenate tensors along ``axis``, differentiable in every operand."""
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * grad.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(grad[tuple(index)])

    return Tensor._result(out_data, tuple(tensors), backward, "concat")


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)
