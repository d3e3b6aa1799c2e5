"""Quaternion-to-real bridge and the real-valued task head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import InvalidArgumentError, ShapeMismatchError
from .quat import QTensor


def quaternion_to_real(f):
    """Squared norm of every quaternion element; rotation-invariant.

    Returns an ndarray for a QTensor input, a Var otherwise (axis 0 of a
    ``(4, ...)`` array is reduced).
    """
    if isinstance(f, QTensor):
        return np.sum(f.data * f.data, axis=0)
    x = ad.as_var(f)
    return ad.sum(x * x, axis=0)


def component_sum(f):
    """Broken bridge (sum of the four components); kept for mutation tests."""
    if isinstance(f, QTensor):
        return np.sum(f.data, axis=0)
    return ad.sum(ad.as_var(f), axis=0)


@dataclass
class TaskHeadParams:
    """Dense layers ``(weight (out, in), bias (out,))`` with ReLU in between."""

    layers: list[tuple[Var, Var]] = field(default_factory=list)

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            prev_out = self.layers[i - 1][0].shape[0]
            if self.layers[i][0].shape[1] != prev_out:
                raise ShapeMismatchError((prev_out,), (self.layers[i][0].shape[1],), f"head layer {i} input")

    @classmethod
    def init(cls, dims: list[int], rng: np.random.Generator) -> "TaskHeadParams":
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            s = np.sqrt(1.0 / fan_in)
            layers.append((Var(rng.uniform(-s, s, (fan_out, fan_in)), requires_grad=True),
                           Var(rng.uniform(-s, s, fan_out), requires_grad=True)))
        return cls(layers)

    def __call__(self, x) -> Var:
        x = ad.as_var(x)
        for i, (w, b) in enumerate(self.layers):
            x = real_linear(w, b, x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x


def real_linear(weight, bias, x) -> Var:
    """``W x + b`` for ``x`` of shape (in,) or (in, batch)."""
    w, b, xv = ad.as_var(weight), ad.as_var(bias), ad.as_var(x)
    if w.ndim != 2 or xv.shape[0] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeMismatchError(w.shape, xv.shape, "weight and input shapes")
    y = ad.matmul(w, xv if xv.ndim == 2 else ad.reshape(xv, (-1, 1)))
    y = y + ad.reshape(b, (-1, 1))
    return y if xv.ndim == 2 else ad.reshape(y, (-1,))


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient ``softmax - onehot`` (per sample, averaged).

    ``logits`` has shape (C,) or (C, batch).
    """
    z = np.asarray(ad.value_of(logits), dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[:, None]
    labels = np.atleast_1d(np.asarray(labels))
    _check_labels(labels, z.shape[0])
    m = z.max(axis=0, keepdims=True)
    lse = m[0] + np.log(np.sum(np.exp(z - m), axis=0))
    cols = np.arange(z.shape[1])
    loss = float(np.mean(lse - z[labels, cols]))
    soft = np.exp(z - lse[None])
    soft[labels, cols] -= 1.0
    grad = soft / z.shape[1]
    return loss, grad[:, 0] if single else grad


def cross_entropy(logits, labels) -> Var:
    """Differentiable mean softmax cross-entropy for (C, batch) logits."""
    z = ad.as_var(logits)
    labels = np.atleast_1d(np.asarray(labels))
    _check_labels(labels, z.shape[0])
    picked = ad.gather(z, (labels, np.arange(z.shape[1])))
    return ad.mean(ad.logsumexp(z, axis=0) - picked)


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidArgumentError("label", labels.tolist(), f"must lie in [0, {n_classes})")
