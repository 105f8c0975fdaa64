"""
Reverse-Mode Automatic Differentiation
======================================

Dense numpy-backed tensors with just enough operators for a transformer
encoder: matmul, elementwise arithmetic, reshape/transpose/slice/concat,
reductions, softmax, layer normalization, GELU and linear layers.

Operations are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = (linear(x, w, b) * 2.0).sum()
        grads = tape.backward(loss, [w, b])

Nodes are appended in creation order, which is already a topological order;
``backward`` sweeps them once in reverse. Without an active tape operations
evaluate eagerly and keep no history. Every result is checked for NaN/Inf.
"""

from __future__ import annotations

import math
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.special import erf

from .errors import InvalidArgumentError, NonFiniteError, ShapeError

Array = npt.NDArray[np.floating]
Operand = Union["Tensor", float, int]
BackwardFn = Callable[[Array, Tuple[bool, ...]], Tuple[Optional[Array], ...]]

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
LAYER_NORM_EPS = 1e-5

_ACTIVE_TAPE: ContextVar[Optional[Tape]] = ContextVar("voclip_active_tape", default=None)


class Tensor:
    """Immutable n-dimensional array that can take part in a tape."""

    def __init__(
        self,
        data: npt.ArrayLike,
        dtype: Optional[npt.DTypeLike] = None,
        requires_grad: bool = False,
    ) -> None:
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in SUPPORTED_DTYPES else np.float64
        arr = np.array(arr, dtype=dtype, copy=True)
        if arr.dtype not in SUPPORTED_DTYPES:
            msg = f"unsupported dtype {arr.dtype}; use float32 or float64"
            raise InvalidArgumentError(msg)
        if not np.all(np.isfinite(arr)):
            msg = "tensor data has non-finite entries"
            raise NonFiniteError(msg)
        arr.flags.writeable = False
        self.data: Array = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> Array:
        return np.array(self.data, copy=True)

    def item(self) -> float:
        if self.size != 1:
            msg = f"item() needs a single-element tensor, got shape {self.shape}"
            raise InvalidArgumentError(msg)
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(_lift(other, self), self)

    def __mul__(self, other: Operand) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other: Operand) -> Tensor:
        return self.__mul__(other)

    def __truediv__(self, other: Union[float, int]) -> Tensor:
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: object) -> Tensor:
        return slice_(self, index)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes if axes else None)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis, keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """Trainable tensor with a stable name and a gradient slot."""

    def __init__(self, data: npt.ArrayLike, name: str, dtype: Optional[npt.DTypeLike] = None) -> None:
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.name = name
        self.grad: Array = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


@dataclass
class _Node:
    op: str
    out: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self) -> None:
        self.nodes: List[_Node] = []
        self.grads: Dict[int, Array] = {}
        self._token: Optional[object] = None

    def __enter__(self) -> Tape:
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)  # type: ignore[arg-type]
            self._token = None

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(
        self, root: Tensor, parameters: Optional[Iterable[Parameter]] = None
    ) -> Dict[str, Array]:
        """Propagate ``d root`` through the tape.

        Fills ``.grad`` of every parameter reached (and of ``parameters``,
        which get zeros when unreached) and returns them by name.
        """
        if root.size != 1:
            msg = f"backward needs a scalar root, got shape {root.shape}"
            raise InvalidArgumentError(msg)
        grads: Dict[int, Array] = {id(root): np.ones_like(root.data)}
        reached: Dict[int, Parameter] = {}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            needs = tuple(t.requires_grad for t in node.inputs)
            for tensor, need, tg in zip(node.inputs, needs, node.backward(g, needs)):
                if not need or tg is None:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + tg
                else:
                    grads[key] = tg
                if isinstance(tensor, Parameter):
                    reached[key] = tensor
        if isinstance(root, Parameter):
            reached[id(root)] = root
        self.grads = grads
        result: Dict[str, Array] = {}
        for param in reached.values():
            param.grad = np.asarray(grads[id(param)], dtype=param.dtype).reshape(param.shape)
            result[param.name] = param.grad
        for param in parameters or ():
            if id(param) not in reached:
                param.grad = np.zeros_like(param.data)
            result[param.name] = param.grad
        return result

    def grad(self, tensor: Tensor) -> Array:
        """Gradient of the last backward root with respect to ``tensor``."""
        g = self.grads.get(id(tensor))
        return np.zeros_like(tensor.data) if g is None else g


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def backward(root: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> Dict[str, Array]:
    """Run :meth:`Tape.backward` on the currently active tape."""
    tape = active_tape()
    if tape is None:
        msg = "backward() called outside an active Tape"
        raise InvalidArgumentError(msg)
    return tape.backward(root, parameters)


def _lift(value: Operand, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _result(op: str, data: Array, inputs: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        msg = f"{op} produced non-finite values"
        raise NonFiniteError(msg)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, dtype=data.dtype, requires_grad=requires)
    tape = active_tape()
    if tape is not None and requires:
        tape.record(_Node(op, out, tuple(inputs), fn))
    return out


def _unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a: Operand, b: Operand) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    assert isinstance(a, Tensor)
    bt = _lift(b, a)
    _broadcast_shape("add", a, bt)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, bt.shape) if needs[1] else None,
        )

    return _result("add", a.data + bt.data, (a, bt), fn)


def sub(a: Tensor, b: Operand) -> Tensor:
    bt = _lift(b, a)
    _broadcast_shape("sub", a, bt)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, bt.shape) if needs[1] else None,
        )

    return _result("sub", a.data - bt.data, (a, bt), fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting."""
    _broadcast_shape("mul", a, b)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return _result("mul", a.data * b.data, (a, b), fn)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a constant scalar."""
    c = np.asarray(factor, dtype=a.dtype)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (g * c,)

    return _result("scale", a.data * c, (a,), fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if needs[0] else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if needs[1] else None
        return ga, gb

    return _result("matmul", data, (a, b), fn)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    perm = tuple(range(a.ndim))[::-1] if axes is None else tuple(int(x) % a.ndim for x in axes)
    if sorted(perm) != list(range(a.ndim)):
        msg = f"transpose: {tuple(axes or ())} is not a permutation of {a.ndim} axes"
        raise InvalidArgumentError(msg)
    inverse = tuple(np.argsort(perm))

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (np.transpose(g, inverse),)

    return _result("transpose", np.transpose(a.data, perm), (a,), fn)


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    perm = list(range(a.ndim))
    perm[axis1], perm[axis2] = perm[axis2], perm[axis1]
    return transpose(a, perm)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (g.reshape(a.shape),)

    return _result("reshape", data, (a,), fn)


def slice_(a: Tensor, index: object) -> Tensor:
    """numpy indexing; gradients of repeated indices accumulate."""
    try:
        data = np.array(a.data[index], copy=True)  # type: ignore[index]
    except IndexError as exc:
        msg = f"slice: {exc} for shape {a.shape}"
        raise InvalidArgumentError(msg) from None

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)  # type: ignore[arg-type]
        return (full,)

    return _result("slice", data, (a,), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        msg = "concat needs at least one tensor"
        raise InvalidArgumentError(msg)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return tuple(np.split(g, bounds, axis=axis))

    return _result("concat", data, tuple(tensors), fn)


def _expand_reduced(g: Array, shape: Tuple[int, ...], axis: Optional[Union[int, Tuple[int, ...]]], keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else axis
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return _result("sum", np.asarray(data, dtype=a.dtype), (a,), fn)


def mean(a: Tensor, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    data = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size // max(int(np.asarray(data).size), 1)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)

    return _result("mean", np.asarray(data, dtype=a.dtype), (a,), fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result("softmax", y, (a,), fn)


def layer_norm(
    x: Tensor,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Normalize over the last axis; ``eps`` is added inside the square root."""
    width = x.shape[-1]
    for p in (gamma, beta):
        if p is not None and p.shape != (width,):
            raise ShapeError("layer_norm", x.shape, p.shape)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat
    if gamma is not None:
        y = y * gamma.data
    if beta is not None:
        y = y + beta.data
    inputs: List[Tensor] = [x]
    if gamma is not None:
        inputs.append(gamma)
    if beta is not None:
        inputs.append(beta)

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        gxhat = g * gamma.data if gamma is not None else g
        gx = inv_std * (
            gxhat
            - np.mean(gxhat, axis=-1, keepdims=True)
            - xhat * np.mean(gxhat * xhat, axis=-1, keepdims=True)
        )
        out: List[Optional[Array]] = [gx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            out.append(np.sum(g * xhat, axis=lead))
        if beta is not None:
            out.append(np.sum(g, axis=lead))
        return tuple(out)

    return _result("layer_norm", np.asarray(y, dtype=x.dtype), tuple(inputs), fn)


def _gelu_derivative(x: Array) -> Array:
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU ``0.5 x (1 + erf(x / sqrt 2))``."""
    y = 0.5 * x.data * (1.0 + erf(x.data / math.sqrt(2.0)))

    def fn(g: Array, needs: Tuple[bool, ...]) -> Tuple[Optional[Array], ...]:
        return (g * _gelu_derivative(x.data),)

    return _result("gelu", np.asarray(y, dtype=x.dtype), (x,), fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped ``(in, out)``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError("linear", x.shape, weight.shape)
    y = matmul(x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError("linear", weight.shape, bias.shape)
        y = add(y, bias)
    return y
