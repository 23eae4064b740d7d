"""
Differentiable tensors on top of numpy with a single-use reverse-mode tape.

Every operation returns a new ``Tensor`` whose node remembers its parents and a
backward rule. ``Tensor.backward`` walks the nodes reachable from a scalar loss in
reverse topological order, accumulates gradients into leaves, then releases the
intermediate nodes; a second ``backward`` through the same nodes raises
``TapeError``.

Training runs in single precision; ``precision("float64")`` switches newly created
tensors (and parameters built inside the block) to double precision for gradient
checks.
"""

from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.models.base import InvariantError, ShapeError, TapeError
from src.utils.logging import get_logger

logger = get_logger(__name__)

_STATE = {'dtype': np.float32, 'grad_enabled': True, 'debug': False}
_HELD = {'mode': None, 'values': None, 'cursor': 0}

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def get_dtype():
    return _STATE['dtype']


@contextmanager
def precision(name: str):
    """Temporarily create tensors in ``name`` precision (``float32`` or ``float64``)."""
    previous = _STATE['dtype']
    _STATE['dtype'] = {'float32': np.float32, 'float64': np.float64}[name]
    try:
        yield
    finally:
        _STATE['dtype'] = previous


@contextmanager
def no_grad():
    """Evaluate without recording nodes (frozen-model inference)."""
    previous = _STATE['grad_enabled']
    _STATE['grad_enabled'] = False
    try:
        yield
    finally:
        _STATE['grad_enabled'] = previous


def set_debug_checks(enabled: bool) -> None:
    """Check every op output for NaN/inf (slow; for debugging training runs)."""
    _STATE['debug'] = bool(enabled)


@contextmanager
def hold_constants(mode: str, values: list):
    """
    Record (``mode="record"``) or replay (``mode="replay"``) every stop-gradient value
    and discrete selection in call order.

    Finite-difference checks record once at the base point and replay during the
    perturbed evaluations, so they differentiate the same surrogate the tape does.
    """
    if mode not in ('record', 'replay'):
        raise ValueError(f"unknown hold mode {mode!r}")
    previous = dict(_HELD)
    _HELD.update(mode=mode, values=values, cursor=0)
    try:
        yield values
    finally:
        _HELD.update(previous)


def held(value: np.ndarray) -> np.ndarray:
    """Pass ``value`` through, or record / replay it under ``hold_constants``."""
    mode = _HELD['mode']
    if mode == 'record':
        _HELD['values'].append(np.array(value, copy=True))
    elif mode == 'replay':
        value = _HELD['values'][_HELD['cursor']]
        _HELD['cursor'] += 1
    return value


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional array with an optional gradient and a tape node."""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != 'f' or arr.dtype != get_dtype():
            arr = arr.astype(get_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = 'leaf'
        self._released = False

    # ------------------------------------------------------------------ node plumbing
    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence['Tensor'], backward: BackwardFn, op: str) -> 'Tensor':
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._released = False
        out._op = op
        needs = _STATE['grad_enabled'] and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        if _STATE['debug'] and not np.all(np.isfinite(data)):
            raise InvariantError(f"non-finite values produced by {op}")
        return out

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._released

    @property
    def shape(self) -> Tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def detach(self) -> 'Tensor':
        """Same values, no gradient path (stop-gradient)."""
        out = Tensor.__new__(Tensor)
        out.data = held(self.data)
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._parents = ()
        out._backward = None
        out._op = 'detach'
        out._released = False
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------ backward
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Raises:
            TapeError: non-scalar output, or nodes already consumed by a previous backward
        """
        if self._released:
            raise TapeError("tape already consumed: backward was called on these nodes before")
        if grad is None:
            if self.data.size != 1:
                raise TapeError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise TapeError("loss does not depend on any tensor that requires grad")

        order = Tape.collect(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        Tape.release(order)

    # ------------------------------------------------------------------ arithmetic
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return reduce_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return reduce_mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def sqrt(self): return sqrt(self)
    def tanh(self): return tanh(self)
    def abs(self): return absolute(self)


class Tape:
    """Traversal helpers over the recorded node graph."""

    @staticmethod
    def collect(root: Tensor) -> List[Tensor]:
        """Nodes reachable from ``root`` in reverse topological order (root first)."""
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
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        order.reverse()
        return order

    @staticmethod
    def release(nodes: Iterable[Tensor]) -> None:
        """Drop backward rules and parent links of consumed interior nodes."""
        for node in nodes:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------- elementwise
def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('add', a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return Tensor._make(a.data + b.data, (a, b), backward, 'add')


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('sub', a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
    return Tensor._make(a.data - b.data, (a, b), backward, 'sub')


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('mul', a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return Tensor._make(a.data * b.data, (a, b), backward, 'mul')


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('div', a, b)

    def backward(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return Tensor._make(a.data / b.data, (a, b), backward, 'div')


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)
    return Tensor._make(a.data ** exponent, (a,), backward, 'pow')


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)
    return Tensor._make(out, (a,), backward, 'exp')


def log(a: Tensor) -> Tensor:
    def backward(g):
        return (g / a.data,)
    return Tensor._make(np.log(a.data), (a,), backward, 'log')


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out,)
    return Tensor._make(out, (a,), backward, 'sqrt')


def absolute(a: Tensor) -> Tensor:
    def backward(g):
        return (g * np.sign(a.data),)
    return Tensor._make(np.abs(a.data), (a,), backward, 'abs')


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)
    return Tensor._make(out, (a,), backward, 'tanh')


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    positive = a.data > 0
    out = np.where(positive, a.data, alpha * np.expm1(np.minimum(a.data, 0.0)))

    def backward(g):
        return (g * np.where(positive, 1.0, out + alpha).astype(a.data.dtype),)
    return Tensor._make(out.astype(a.data.dtype), (a,), backward, 'elu')


# ---------------------------------------------------------------------- linear algebra
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul', a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError('matmul', a.shape, b.shape) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else unbroadcast(ga, a.shape),
                None if gb is None else unbroadcast(gb, b.shape))
    return Tensor._make(out, (a, b), backward, 'matmul')


# ---------------------------------------------------------------------- reductions / shape
def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return Tensor._make(np.asarray(out), (a,), backward, 'sum')


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(reduce_sum(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', a.shape, tuple(shape)) from None

    def backward(g):
        return (g.reshape(a.shape),)
    return Tensor._make(out, (a,), backward, 'reshape')


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)
    return Tensor._make(np.transpose(a.data, axes), (a,), backward, 'transpose')


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    out = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, slice, type(Ellipsis), type(None))) for p in parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)
    return Tensor._make(np.array(out, copy=True), (a,), backward, 'getitem')


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concat', *[t.shape for t in tensors]) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return Tensor._make(out, tuple(tensors), backward, 'concat')
