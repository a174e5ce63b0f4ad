"""Minimal reverse-mode differentiation over dense numpy arrays.

Every function in this module accepts either :class:`Tensor` graph nodes or
plain ``numpy`` arrays. When no argument is a ``Tensor`` the computation runs
eagerly on arrays and returns an array, so the same forward code serves both
training (graph recorded) and inference (no graph).
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class DomainError(ValueError):
    """An operand lies outside the domain of the operation."""


class Tensor:
    """A node of the computation graph.

    Leaves created by the user (parameters) accumulate ``grad`` across calls
    to :func:`backward` until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _value(x):
    return x.data if isinstance(x, Tensor) else x


def _needs_graph(*xs) -> bool:
    return any(isinstance(x, Tensor) and (x.requires_grad or x._parents) for x in xs)


def _node(value: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(value, dtype=value.dtype)
    out._parents = tuple(p for p in parents)
    out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(np.shape(a), np.shape(b))
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {np.shape(a)} and {np.shape(b)}") from None


# ---------------------------------------------------------------------------
# binary elementwise ops
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = _value(a), _value(b)
    _check_broadcast(av, bv, "add")
    out = av + bv
    if not _needs_graph(a, b):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = _value(a), _value(b)
    _check_broadcast(av, bv, "sub")
    out = av - bv
    if not _needs_graph(a, b):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = _value(a), _value(b)
    _check_broadcast(av, bv, "mul")
    out = av * bv
    if not _needs_graph(a, b):
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _node(
        out, (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb))
    )


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    out = av @ bv
    if not _needs_graph(a, b):
        return out
    return _node(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


# ---------------------------------------------------------------------------
# unary elementwise ops
# ---------------------------------------------------------------------------


def _unary(x, forward, local_grad):
    xv = _value(x)
    out = forward(xv)
    if not _needs_graph(x):
        return out
    return _node(out, (x,), lambda g: (g * local_grad(xv, out),))


def tanh(x):
    return _unary(x, np.tanh, lambda x_, y: 1.0 - y * y)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    return _unary(x, lambda v: _sigmoid(np.asarray(v)), lambda x_, y: y * (1.0 - y))


def exp(x):
    return _unary(x, np.exp, lambda x_, y: y)


def log(x):
    xv = _value(x)
    if np.any(xv <= 0):
        raise DomainError("log: input has non-positive entries")
    return _unary(x, np.log, lambda x_, y: 1.0 / x_)


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0), lambda x_, y: (x_ > 0).astype(x_.dtype))


def square(x):
    return _unary(x, np.square, lambda x_, y: 2 * x_)


def clip(x, lo: float, hi: float):
    """Clamp to ``[lo, hi]``; gradient is zero where the clamp is active."""
    return _unary(
        x,
        lambda v: np.clip(v, lo, hi),
        lambda x_, y: ((x_ >= lo) & (x_ <= hi)).astype(x_.dtype),
    )


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001
    xv = _value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=xv.dtype)
    if not _needs_graph(x):
        return out
    shape = xv.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(xv.dtype),)

    return _node(out, (x,), backward)


def mean(x, axis=None):
    xv = _value(x)
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis), 1.0 / float(count))


def logsumexp(x, axis: int = -1, keepdims: bool = False):
    """Stable ``log(sum(exp(x)))`` along ``axis``."""
    xv = _value(x)
    if xv.ndim == 0 or xv.shape[axis] == 0:
        raise ShapeError(f"logsumexp: empty input of shape {xv.shape}")
    m = np.max(xv, axis=axis, keepdims=True)
    shifted = np.exp(xv - m)
    s = np.sum(shifted, axis=axis, keepdims=True)
    out_keep = m + np.log(s)
    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)
    if not _needs_graph(x):
        return out
    softmax = shifted / s

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * softmax,)

    return _node(out, (x,), backward)


def log_softmax(x, axis: int = -1):
    return sub(x, logsumexp(x, axis=axis, keepdims=True))


def reshape(x, shape: tuple[int, ...]):
    xv = _value(x)
    out = xv.reshape(shape)
    if not _needs_graph(x):
        return out
    return _node(out, (x,), lambda g: (g.reshape(xv.shape),))


def getitem(x, index):
    xv = _value(x)
    out = xv[index]
    if not _needs_graph(x):
        return out

    def backward(g):
        full = np.zeros_like(xv)
        np.add.at(full, index, g)
        return (full,)

    return _node(out, (x,), backward)


def concat(xs: Sequence, axis: int = -1):
    values = [_value(x) for x in xs]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[v.shape for v in values]}") from None
    if not _needs_graph(*xs):
        return out
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    return _node(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if isinstance(p, Tensor) and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = node.grad + g.reshape(node.data.shape)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not isinstance(parent, Tensor) or pg is None:
                continue
            if not (parent.requires_grad or parent._parents):
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction over a named set of parameters."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)


def parameters(arrays: Mapping[str, np.ndarray], dtype=None) -> dict[str, Tensor]:
    """Wrap named arrays as trainable leaves (copies)."""
    return {
        k: Tensor(np.array(v, dtype=dtype or v.dtype), requires_grad=True, name=k)
        for k, v in arrays.items()
    }


def values(params: Mapping[str, Tensor] | Iterable) -> dict[str, np.ndarray]:
    return {k: p.data for k, p in dict(params).items()}
