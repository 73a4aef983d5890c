"""
TVNet - Core Autograd Tensor

A small reverse-mode autograd engine covering exactly the operations the
TEM, VEM and PEM networks need.
"""

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from tvnet.core.errors import GraphError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

# Every op output is checked for NaN/Inf when enabled
CHECK_FINITE = True


def _as_float_array(data: ArrayLike, dtype: Optional[np.dtype] = None) -> np.ndarray:
    array = np.asarray(data)
    if dtype is not None:
        return array.astype(dtype, copy=False)
    if not np.issubdtype(array.dtype, np.floating):
        array = array.astype(np.float64)
    return array


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    Array of real values that records the operations producing it

    Attributes:
        data: Values as a numpy array
        grad: Gradient of the last backward pass, same shape as data
        requires_grad: Whether gradients flow into this tensor
        name: Optional parameter name
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
        _parents: Tuple["Tensor", ...] = (),
        _op: str = "",
    ):
        self.data = _as_float_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = _op
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- graph construction -----------------------------------------------
    def _coerce(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(other, dtype=self.dtype)

    @staticmethod
    def _make(
        data: np.ndarray,
        parents: Tuple["Tensor", ...],
        op: str,
        backward: Callable[[np.ndarray], None],
    ) -> "Tensor":
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"Operation '{op}' produced non-finite values")
        requires_grad = any(parent.requires_grad for parent in parents)
        out = Tensor(data, requires_grad=requires_grad, _parents=parents if requires_grad else (), _op=op)
        if requires_grad:
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other

        def backward(grad: np.ndarray) -> None:
            a._accumulate(_unbroadcast(grad, a.shape))
            b._accumulate(_unbroadcast(grad, b.shape))

        return Tensor._make(a.data + b.data, (a, b), "add", backward)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return self + other

    def __neg__(self) -> "Tensor":
        a = self

        def backward(grad: np.ndarray) -> None:
            a._accumulate(-grad)

        return Tensor._make(-a.data, (a,), "neg", backward)

    def __sub__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other

        def backward(grad: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(grad * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), "mul", backward)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self * other

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        a = self
        advanced = isinstance(index, (list, np.ndarray)) or (
            isinstance(index, tuple) and any(isinstance(part, (list, np.ndarray)) for part in index)
        )

        def backward(grad: np.ndarray) -> None:
            full = np.zeros_like(a.data)
            if advanced:
                np.add.at(full, index, grad)
            else:
                full[index] += grad
            a._accumulate(full)

        return Tensor._make(a.data[index], (a,), "getitem", backward)

    # -- reductions and reshaping -----------------------------------------
    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward(grad: np.ndarray) -> None:
            if axis is not None and not keepdims:
                grad = np.expand_dims(grad, axis)
            a._accumulate(np.broadcast_to(grad, a.shape))

        return Tensor._make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum", backward)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def backward(grad: np.ndarray) -> None:
            a._accumulate(grad.reshape(a.shape))

        return Tensor._make(a.data.reshape(shape), (a,), "reshape", backward)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        a = self

        def backward(grad: np.ndarray) -> None:
            a._accumulate(np.swapaxes(grad, axis1, axis2))

        return Tensor._make(np.swapaxes(a.data, axis1, axis2), (a,), "swapaxes", backward)

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError(f"T expects a 2-D tensor, got shape {self.shape}")
        return self.swapaxes(0, 1)

    # -- backward ---------------------------------------------------------
    def backward(self) -> None:
        """
        Run reverse-mode differentiation from this scalar

        Raises:
            GraphError: If the tensor is not a scalar, or its graph was already consumed
        """
        if self.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward() called twice on the same graph; re-run the forward pass first")
        if not self.requires_grad:
            self._consumed = True
            return

        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
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
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        if self._backward is None:
            # The loss is itself a leaf
            self._accumulate(np.ones_like(self.data))
            self._consumed = True
            return

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)

        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node.grad = None
        self._consumed = True


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(grad: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ grad, b.shape))

    return Tensor._make(a.data @ b.data, (a, b), "matmul", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new axis"""
    if not tensors:
        raise ShapeError("stack() needs at least one tensor")
    shape = tensors[0].shape
    for tensor in tensors:
        if tensor.shape != shape:
            raise ShapeError(f"stack() shapes differ: {shape} vs {tensor.shape}")
    parents = tuple(tensors)

    def backward(grad: np.ndarray) -> None:
        for position, tensor in enumerate(parents):
            if tensor.requires_grad:
                tensor._accumulate(np.take(grad, position, axis=axis))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), parents, "stack", backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(grad: np.ndarray) -> None:
        x._accumulate(grad * mask)

    return Tensor._make(x.data * mask, (x,), "relu", backward)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(grad: np.ndarray) -> None:
        x._accumulate(grad * out * (1.0 - out))

    return Tensor._make(out, (x,), "sigmoid", backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(grad: np.ndarray) -> None:
        x._accumulate(grad * (1.0 - out * out))

    return Tensor._make(out, (x,), "tanh", backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NonFiniteError("log() of a non-positive value")

    def backward(grad: np.ndarray) -> None:
        x._accumulate(grad / x.data)

    return Tensor._make(np.log(x.data), (x,), "log", backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp values; the gradient passes only where the value was inside the range"""
    inside = (x.data >= low) & (x.data <= high)

    def backward(grad: np.ndarray) -> None:
        x._accumulate(grad * inside)

    return Tensor._make(np.clip(x.data, low, high), (x,), "clip", backward)


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int = 1, padding: int = 0) -> Tensor:
    """
    Batched 1D cross-correlation

    Args:
        x: Input of shape (B, C_in, L)
        weight: Kernel of shape (C_out, C_in, K)
        bias: Optional bias of shape (C_out,)
        stride: Step between output positions
        padding: Zeros added on both ends of the time axis

    Returns:
        Tensor: Output of shape (B, C_out, (L + 2*padding - K) // stride + 1)
    """
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects input (B, C_in, L), got {x.shape}")
    c_out, c_in, kernel = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d input has {x.shape[1]} channels, layer expects {c_in}")
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    length_padded = padded.shape[2]
    if length_padded < kernel:
        raise ShapeError(f"conv1d input length {x.shape[2]} (+2*{padding} padding) is shorter than kernel {kernel}")
    length_out = (length_padded - kernel) // stride + 1
    positions = np.arange(length_out)[:, None] * stride + np.arange(kernel)[None, :]
    cols = padded[:, :, positions]  # (B, C_in, L_out, K)
    out = np.einsum("bclk,ock->bol", cols, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(grad: np.ndarray) -> None:
        if weight.requires_grad:
            weight._accumulate(np.einsum("bol,bclk->ock", grad, cols, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(grad.sum(axis=(0, 2)))
        if x.requires_grad:
            grad_cols = np.einsum("bol,ock->bclk", grad, weight.data, optimize=True)
            grad_padded = np.zeros_like(padded)
            span = stride * (length_out - 1) + 1
            for k in range(kernel):
                grad_padded[:, :, k:k + span:stride] += grad_cols[:, :, :, k]
            x._accumulate(grad_padded[:, :, padding:padding + x.shape[2]])

    return Tensor._make(out, parents, "conv1d", backward)


def backward(loss: Tensor, parameters: Optional[Iterable[Tensor]] = None) -> Dict[str, np.ndarray]:
    """
    Populate gradients for every parameter that took part in producing the loss

    Args:
        loss: Scalar produced by recorded operations
        parameters: Parameters to report; their gradients are reset to zero first,
            so parameters that did not participate end with a zero gradient

    Returns:
        Dict[str, np.ndarray]: Gradient per parameter name
    """
    params = list(parameters) if parameters is not None else []
    for param in params:
        param.zero_grad()
    loss.backward()
    return {param.name or f"param_{i}": param.grad for i, param in enumerate(params)}
