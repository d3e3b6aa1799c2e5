"""Small reverse-mode differentiation engine over numpy arrays.

Every quaternion tensor is handled as its four real channels, so the engine
only needs real-valued primitives. Each operation whose inputs require
gradients records its inputs and a vector-Jacobian product on the output
``Var``; ``backward`` walks that recorded graph in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import TapeError

NORM_GRAD_GUARD = 1e-20


class Var:
    """An array value that may take part in differentiation."""

    __slots__ = ("value", "requires_grad", "name", "_inputs", "_vjp")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._inputs: tuple[Var, ...] = ()
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return gather(self, index)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _topological(loss: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in node._inputs:
            if inp.requires_grad and id(inp) not in seen:
                stack.append((inp, False))
    return order


def backward(loss, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Gradients of the scalar ``loss`` with respect to each of ``wrt``.

    Parameters that do not influence ``loss`` get zero gradients.
    """
    loss = as_var(loss)
    if loss.value.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for inp, gi in zip(node._inputs, node._vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
    return [grads.get(id(p), np.zeros_like(p.value)) for p in wrt]


def _record(value: np.ndarray, inputs: tuple[Var, ...], vjp: Callable) -> Var:
    out = Var(value)
    if any(i.requires_grad for i in inputs):
        out.requires_grad = True
        out._inputs = inputs
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    return _record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    out = av / bv
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)),
    )


def neg(a) -> Var:
    a = as_var(a)
    return _record(-a.value, (a,), lambda g: (-g,))


def square(a) -> Var:
    a = as_var(a)
    av = a.value
    return _record(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return _record(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    av = a.value
    return _record(np.log(av), (a,), lambda g: (g / av,))


def maximum(a, b) -> Var:
    """Elementwise max; on exact ties the gradient goes to ``a``."""
    a, b = as_var(a), as_var(b)
    pick_a = a.value >= b.value
    return _record(
        np.where(pick_a, a.value, b.value),
        (a, b),
        lambda g: (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                   _unbroadcast(np.where(pick_a, 0.0, g), b.shape)),
    )


def relu(a) -> Var:
    a = as_var(a)
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),))


def detach(a) -> Var:
    return Var(value_of(a))


# -- reductions and reshaping ----------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001 - mirrors numpy
    a = as_var(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.shape
    return _record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Var:
    a = as_var(a)
    inverse = np.argsort(axes)
    return _record(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(parts: Sequence, axis: int) -> Var:
    parts = tuple(as_var(p) for p in parts)
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _record(
        np.concatenate([p.value for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def broadcast_to(a, shape) -> Var:
    a = as_var(a)
    old = a.shape
    return _record(np.broadcast_to(a.value, shape).copy(), (a,), lambda g: (_unbroadcast(g, old),))


def gather(a, index) -> Var:
    """``a[index]`` for any numpy index; the backward pass scatter-adds."""
    a = as_var(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _record(a.value[index], (a,), vjp)


def take(a, idx: np.ndarray, axis: int) -> Var:
    a = as_var(a)
    idx = np.asarray(idx)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (out,)

    return _record(np.take(a.value, idx, axis=axis), (a,), vjp)


# -- linear algebra ----------------------------------------------------------


def channel_mix(w, x) -> Var:
    """Contract a real ``(out, in)`` matrix with axis 1 of ``x``.

    For ``x`` of shape ``(Q, in, ...)`` the result has shape ``(Q, out, ...)``;
    the same real weight multiplies all ``Q`` channels.
    """
    w, x = as_var(w), as_var(x)
    wv, xv = w.value, x.value
    out = np.moveaxis(np.tensordot(wv, xv, axes=([1], [1])), 0, 1)

    def vjp(g):
        rest = [0] + list(range(2, xv.ndim))
        gw = np.tensordot(g, xv, axes=(rest, rest))
        gx = np.moveaxis(np.tensordot(wv, g, axes=([0], [1])), 0, 1)
        return gw, gx

    return _record(out, (w, x), vjp)


def matmul(w, x) -> Var:
    w, x = as_var(w), as_var(x)
    wv, xv = w.value, x.value
    return _record(wv @ xv, (w, x), lambda g: (g @ xv.T, wv.T @ g))


# -- composite primitives with hand-written backward ------------------------


def qnorm(x) -> Var:
    """Quaternion norm over axis 0.

    The backward pass uses ``sqrt(|q|^2 + NORM_GRAD_GUARD)`` so the gradient
    at the origin is 0 rather than NaN; forward values are exact.
    """
    x = as_var(x)
    xv = x.value
    sq = np.sum(xv * xv, axis=0)
    out = np.sqrt(sq)
    guarded = np.sqrt(sq + NORM_GRAD_GUARD)
    return _record(out, (x,), lambda g: (xv * (g / guarded)[None],))


def logsumexp(x, axis: int) -> Var:
    x = as_var(x)
    xv = x.value
    m = np.max(xv, axis=axis, keepdims=True)
    e = np.exp(xv - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    soft = e / s
    return _record(out, (x,), lambda g: (np.expand_dims(g, axis) * soft,))
