"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation records its parents and a backward closure
mapping the upstream gradient to one gradient per parent. `Tensor.backward`
walks the tape in reverse topological order and adds gradients into the
`grad` buffers of leaf tensors (inputs and parameters).
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from arcconv.core.errors import ContractError, DimensionError
from arcconv.models.configs import DType

MAX_RANK = 5

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording for the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _as_float_array(data, dtype) -> np.ndarray:
    if isinstance(dtype, DType):
        dtype = dtype.numpy_dtype
    arr = np.array(data, dtype=dtype, copy=True)
    if dtype is None and arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.dtype not in (np.float32, np.float64):
        raise DimensionError(f"unsupported dtype {arr.dtype}")
    return arr


def _check_shape(arr: np.ndarray) -> None:
    if arr.ndim > MAX_RANK:
        raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
    if 0 in arr.shape:
        raise DimensionError(f"all extents must be >= 1, got shape {arr.shape}")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Row-major dense array of binary32/binary64 values with autodiff support."""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = _as_float_array(data, dtype)
        _check_shape(arr)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        _check_shape(arr)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out.op = "leaf"
        return out

    # -- metadata -------------------------------------------------------

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    # -- gradients ------------------------------------------------------

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad.astype(self.data.dtype, copy=False)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `grad`."""
        if self.ndim != 0:
            raise ContractError(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward called on a tensor that does not require grad")

        order = []
        seen = set()
        stack = [(self, False)]
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

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node._accumulate(grad)
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    # -- arithmetic -----------------------------------------------------

    def _lift(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor._wrap(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape
        return make_result(self.data + other.data, (self, other),
                           lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)), "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return make_result(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                    unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

        return make_result(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return (unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                    unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None)

        return make_result(a.data / b.data, (a, b), backward, "div")

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        out = np.sum(self.data, axis=axis, dtype=np.float64, keepdims=keepdims).astype(self.dtype)

        def backward(g):
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
            return (np.broadcast_to(g, shape).copy(),)

        return make_result(np.asarray(out), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        total = self.sum(axis=axis, keepdims=keepdims)
        count = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return total * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return make_result(self.data.reshape(shape), (self,),
                           lambda g: (g.reshape(original),), "reshape")

    def __getitem__(self, index) -> "Tensor":
        original, dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(original, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return make_result(np.array(self.data[index]), (self,), backward, "index")


class Parameter(Tensor):
    """Trainable leaf tensor; its `grad` buffer always exists and matches its shape."""

    def __init__(self, data: ArrayLike, dtype=None, trainable: bool = True):
        super().__init__(data, dtype=dtype, requires_grad=trainable)
        self.grad = np.zeros_like(self.data)
        self.op = "parameter"

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @property
    def value(self) -> Tensor:
        """The current value as a plain (non-recording) tensor."""
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, trainable={self.trainable})"


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap an op's output and record it on the tape when any parent needs grad."""
    out = Tensor._wrap(np.asarray(data))
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def as_tensor(data: ArrayLike, dtype=None) -> Tensor:
    """Return `data` unchanged if it already is a Tensor, else wrap a copy."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data, dtype=dtype)
