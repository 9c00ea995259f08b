"""
Dense tensors with reverse-mode gradients.

A Tensor wraps a numpy array.  Every op records its parents and a closure
that pushes the output gradient back to them; ``Tensor.backward`` walks the
recorded graph in reverse topological order.  The graph is released once
gradients have been pushed through it.
"""
import contextlib
import threading
from typing import (Any, Callable, Dict, Iterator, List, Optional, Sequence,
                    Set, Tuple, Union)

import numpy as np

from newsfuse.exceptions import DegenerateInputError, ShapeError

Backward = Callable[[np.ndarray], None]
Axis = Optional[Union[int, Tuple[int, ...]]]

_state = threading.local()


def is_grad_enabled() -> bool:
    return bool(getattr(_state, "enabled", True))


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Ops inside the block produce constants; no graph is recorded"""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    # Keep numpy from claiming `ndarray <op> Tensor`
    __array_priority__ = 100.0

    def __init__(self, data: Any, requires_grad: bool = False,
                 dtype: Any = None) -> None:
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array  # type: np.ndarray
        self.requires_grad = requires_grad
        self.grad = None  # type: Optional[np.ndarray]
        self._parents = ()  # type: Tuple[Tensor, ...]
        self._backward = None  # type: Optional[Backward]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def __repr__(self) -> str:
        return "Tensor(shape={}, requires_grad={})".format(
            self.shape, self.requires_grad)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("Tensor does not require grad")
        if grad is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ShapeError("Seed gradient shape {} != {}".format(
                    seed.shape, self.data.shape))
        order = _topological(self)
        self._accumulate(seed)
        for node in reversed(order):
            if node._backward is None:
                continue
            if node.grad is not None:
                node._backward(node.grad)
            # Intermediate nodes drop their graph and gradient
            node._backward = None
            node._parents = ()
            node.grad = None

    # operators ==============================================================

    def __add__(self, other: Any) -> "Tensor":
        return add(self, _lift(other, self))

    def __radd__(self, other: Any) -> "Tensor":
        return add(_lift(other, self), self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, _lift(other, self))

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(_lift(other, self), self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, _lift(other, self))

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(_lift(other, self), self)

    def __truediv__(self, other: Any) -> "Tensor":
        return div(self, _lift(other, self))

    def __rtruediv__(self, other: Any) -> "Tensor":
        return div(_lift(other, self), self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: Any) -> "Tensor":
        return matmul(self, _lift(other, self))

    def __rmatmul__(self, other: Any) -> "Tensor":
        return matmul(_lift(other, self), self)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, tuple(shape))

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, tuple(axes) or None)

    def swapaxes(self, first: int, second: int) -> "Tensor":
        return swapaxes(self, first, second)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def relu(self) -> "Tensor":
        return relu(self)


class Parameter(Tensor):
    """
    A named, optimizer-owned Tensor.

    ``frozen_rows`` lists rows (first axis) whose gradient is always zero,
    e.g. the padding row of an embedding table.  ``trainable=False`` freezes
    the whole tensor.
    """
    def __init__(self, data: Any, name: str = "", trainable: bool = True,
                 frozen_rows: Sequence[int] = (), dtype: Any = None) -> None:
        super().__init__(np.array(data, dtype=dtype, copy=True),
                         requires_grad=trainable)
        self.name = name
        self.frozen_rows = tuple(frozen_rows)

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    def __repr__(self) -> str:
        return "Parameter(name={!r}, shape={})".format(self.name, self.shape)

    def _accumulate(self, grad: np.ndarray) -> None:
        super()._accumulate(grad)
        if self.frozen_rows and self.grad is not None:
            self.grad[list(self.frozen_rows)] = 0


class Module:
    """
    Container of Parameters and sub-Modules.

    Parameter names are the attribute paths from the root, joined by dots
    (``user_encoder.gru.W_z``).  Lists and tuples of Modules are indexed.
    """
    training = True

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def _named_members(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = prefix + attr
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value._named_members(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield "{}.{}".format(name, i), item
                    elif isinstance(item, Module):
                        yield from item._named_members(
                            "{}.{}.".format(name, i))

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        seen = set()  # type: Set[int]
        for name, param in self._named_members(""):
            if id(param) in seen:
                continue
            seen.add(id(param))
            param.name = name
            yield name, param

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            children = value if isinstance(value, (list, tuple)) else [value]
            for child in children:
                if isinstance(child, Module):
                    yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy()
                for name, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError("State mismatch: missing {} unexpected {}".format(
                sorted(missing), sorted(unexpected)))
        for name, param in params.items():
            value = np.asarray(state[name])
            if value.shape != param.data.shape:
                raise ShapeError("{}: expected {} got {}".format(
                    name, param.data.shape, value.shape))
            param.data[...] = value


# graph utilities =============================================================


def _topological(root: Tensor) -> List[Tensor]:
    order = []  # type: List[Tensor]
    seen = set()  # type: Set[int]
    stack = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def record_op(data: np.ndarray, parents: Tuple[Tensor, ...],
              backward: Backward) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _lift(value: Any, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def constant(data: Any, dtype: Any = None) -> Tensor:
    return Tensor(data, dtype=dtype)


# elementwise =================================================================


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad)
        b._accumulate(grad)
    return record_op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad)
        b._accumulate(-grad)
    return record_op(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad * b.data)
        b._accumulate(grad * a.data)
    return record_op(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad / b.data)
        b._accumulate(-grad * a.data / (b.data * b.data))
    return record_op(a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(-grad)
    return record_op(-a.data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad * out)
    return record_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad / a.data)
    return record_op(np.log(a.data), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad * (1.0 - out * out))
    return record_op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # tanh form stays finite for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad * out * (1.0 - out))
    return record_op(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad * positive)
    return record_op(np.where(positive, a.data, 0).astype(a.data.dtype),
                     (a,), backward)


# linear algebra ==============================================================


def matmul(a: Tensor, b: Tensor) -> Tensor:
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != inner_b:
        raise ShapeError("Cannot matmul {} and {}".format(a.shape, b.shape))
    out = np.matmul(a.data, b.data)

    def backward(grad: np.ndarray) -> None:
        if a.ndim == 1 and b.ndim == 1:
            a._accumulate(grad * b.data)
            b._accumulate(grad * a.data)
            return
        a2 = a.data[None, :] if a.ndim == 1 else a.data
        b2 = b.data[:, None] if b.ndim == 1 else b.data
        g = grad
        if a.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.ndim == 1:
            g = np.expand_dims(g, -1)
        grad_a = _unbroadcast(np.matmul(g, np.swapaxes(b2, -1, -2)), a2.shape)
        grad_b = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g), b2.shape)
        a._accumulate(grad_a.reshape(a.shape))
        b._accumulate(grad_b.reshape(b.shape))
    return record_op(out, (a, b), backward)


# reductions ==================================================================


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)

    def backward(grad: np.ndarray) -> None:
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        a._accumulate(np.broadcast_to(grad, a.shape))
    return record_op(np.sum(a.data, axis=axes, keepdims=keepdims), (a,),
                     backward)


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    if count == 0:
        raise DegenerateInputError("Mean over an empty axis")
    return tsum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def max_over(a: Tensor, axis: int,
             mask: Optional[np.ndarray] = None) -> Tensor:
    """Maximum along ``axis``, ignoring positions where ``mask`` is False"""
    axis = axis % a.ndim
    values = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, a.shape)
        if not np.all(np.any(mask, axis=axis)):
            raise DegenerateInputError("Max over a fully masked slice")
        values = np.where(mask, a.data, -np.inf)
    if a.shape[axis] == 0:
        raise DegenerateInputError("Max over an empty axis")
    index = np.argmax(values, axis=axis)
    index = np.expand_dims(index, axis)
    out = np.take_along_axis(a.data, index, axis=axis).squeeze(axis)

    def backward(grad: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        np.put_along_axis(full, index, np.expand_dims(grad, axis), axis=axis)
        a._accumulate(full)
    return record_op(out, (a,), backward)


# shape =======================================================================


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad.reshape(a.shape))
    return record_op(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad.transpose(inverse))
    return record_op(a.data.transpose(axes), (a,), backward)


def swapaxes(a: Tensor, first: int, second: int) -> Tensor:
    def backward(grad: np.ndarray) -> None:
        a._accumulate(np.swapaxes(grad, first, second))
    return record_op(np.swapaxes(a.data, first, second), (a,), backward)


def _is_basic(index: Any) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis
               or p is None for p in parts)


def getitem(a: Tensor, index: Any) -> Tensor:
    basic = _is_basic(index)

    def backward(grad: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        if basic:
            full[index] = grad
        else:
            np.add.at(full, index, grad)
        a._accumulate(full)
    return record_op(a.data[index], (a,), backward)


def take(table: Tensor, indices: Any) -> Tensor:
    """Gather rows of ``table``; repeated indices accumulate gradient"""
    indices = np.asarray(indices, dtype=np.int64)
    rows = table.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= rows):
        raise IndexError("Row index out of range [0, {})".format(rows))

    def backward(grad: np.ndarray) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, indices, grad)
        table._accumulate(full)
    return record_op(table.data[indices], (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DegenerateInputError("Nothing to concatenate")
    ndim = tensors[0].ndim
    axis = axis % ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as error:
        raise ShapeError(str(error)) from error

    def backward(grad: np.ndarray) -> None:
        for tensor, piece in zip(tensors, np.split(grad, bounds, axis=axis)):
            tensor._accumulate(piece)
    return record_op(out, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DegenerateInputError("Nothing to stack")
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as error:
        raise ShapeError(str(error)) from error
    axis = axis % out.ndim

    def backward(grad: np.ndarray) -> None:
        for i, tensor in enumerate(tensors):
            tensor._accumulate(np.take(grad, i, axis=axis))
    return record_op(out, tuple(tensors), backward)


def broadcast_to(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as error:
        raise ShapeError(str(error)) from error

    def backward(grad: np.ndarray) -> None:
        a._accumulate(grad)
    return record_op(out, (a,), backward)


# normalization ===============================================================


def softmax(a: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax over the last axis.

    Positions where ``mask`` is False get exactly zero weight.  A row with
    no unmasked position raises DegenerateInputError.
    """
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DegenerateInputError("Softmax over an empty axis")
    logits = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        if not np.all(np.any(mask, axis=-1)):
            raise DegenerateInputError("Softmax over a fully masked row")
        logits = np.where(mask, logits, -np.inf)
    shifted = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    out = (shifted / np.sum(shifted, axis=-1, keepdims=True)).astype(a.dtype)

    def backward(grad: np.ndarray) -> None:
        inner = np.sum(grad * out, axis=-1, keepdims=True)
        a._accumulate(out * (grad - inner))
    return record_op(out, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DegenerateInputError("Softmax over an empty axis")
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))

    def backward(grad: np.ndarray) -> None:
        total = np.sum(grad, axis=-1, keepdims=True)
        a._accumulate(grad - np.exp(out) * total)
    return record_op(out, (a,), backward)
