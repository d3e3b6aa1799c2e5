"""Rotation-equivariant layer operations on quaternion features.

All functions accept either a ``QTensor`` (returning a ``QTensor``) or a
channel-first array / ``Var`` of shape ``(4, C, ...)`` (returning a ``Var`` so
the op can take part in a recorded forward pass). Axis 1 is the feature axis
``C``; the remaining axes index points (or groups) and batch samples.

The non-equivariant counterparts at the bottom of the module (biased
convolution, componentwise ReLU, standard batch-norm and max-pooling) exist for
the automatically derived twin network and for mutation tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import InvalidArgumentError, ShapeMismatchError
from .quat import Quaternion, QTensor

RELU_MODES = ("constant", "batch_mean")
_TINY = 1e-300


def _lift(f):
    """Return (Var in (4, ...) layout, rewrap callable)."""
    if isinstance(f, QTensor):
        return Var(f.data), lambda v: QTensor(ad.value_of(v))
    return ad.as_var(f), lambda v: v


@dataclass
class LayerParams:
    """Per-layer configuration shared by the equivariant ops.

    The convolution weight has no bias slot by construction.
    """

    weight: np.ndarray | None = None
    relu_c_mode: str = "constant"
    relu_c: float = 1.0
    bn_epsilon: float = 1e-5
    dropout_p: float = 0.0
    dropout_scale: bool = True

    def __post_init__(self):
        if self.relu_c_mode not in RELU_MODES:
            raise InvalidArgumentError("relu_c_mode", self.relu_c_mode, f"expected one of {RELU_MODES}")
        if self.relu_c_mode == "constant" and not self.relu_c > 0:
            raise InvalidArgumentError("relu_c", self.relu_c, "must be positive")
        if not self.bn_epsilon > 0:
            raise InvalidArgumentError("bn_epsilon", self.bn_epsilon, "must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidArgumentError("dropout_p", self.dropout_p, "must lie in [0, 1)")


# -- convolution -------------------------------------------------------------


def qconv(weight, f):
    """1x1 convolution ``out_u = sum_v weight[u, v] f_v`` without bias."""
    x, wrap = _lift(f)
    w = ad.as_var(weight)
    if w.ndim != 2 or x.ndim < 2 or w.shape[1] != x.shape[1]:
        raise ShapeMismatchError(w.shape, x.shape[1:], "weight and feature shapes")
    return wrap(ad.channel_mix(w, x))


# -- ReLU --------------------------------------------------------------------


def qrelu(f, c: float = 1.0, mode: str = "constant"):
    """Norm-gated ReLU ``(|f_v| / max(|f_v|, c)) f_v``.

    ``mode="batch_mean"`` sets ``c`` to the mean norm over the feature axis of
    each sample and position (the value is recomputed, and differentiated,
    on every call).
    """
    x, wrap = _lift(f)
    if mode not in RELU_MODES:
        raise InvalidArgumentError("mode", mode, f"expected one of {RELU_MODES}")
    n = ad.qnorm(x)
    if mode == "constant":
        if not c > 0:
            raise InvalidArgumentError("c", c, "must be positive")
        denom = ad.maximum(n, c)
    else:
        if x.shape[1] == 0:
            raise InvalidArgumentError("f", x.shape, "batch_mean mode needs a non-empty feature axis")
        cvar = ad.mean(n, axis=0, keepdims=True)
        denom = ad.maximum(ad.maximum(n, cvar), _TINY)
    factor = n / denom
    return wrap(x * ad.reshape(factor, (1,) + factor.shape))


def qrelu_stop_gradient(f, c: float = 1.0):
    """qrelu whose backward pass treats the gating factor as a constant.

    Forward values equal ``qrelu``; the gradient is deliberately wrong. Used
    only to prove the gradient certificate can fail.
    """
    x, wrap = _lift(f)
    n = ad.qnorm(x)
    factor = ad.detach(n / ad.maximum(n, c))
    return wrap(x * ad.reshape(factor, (1,) + factor.shape))


# -- batch normalization ------------------------------------------------------


def qbatchnorm_var(x, eps: float, reduce_axes: tuple[int, ...], running_ms: np.ndarray | None = None,
                   training: bool = True, momentum: float = 0.1, scale=None) -> Var:
    """Divide each feature channel by ``sqrt(E[|f|^2] + eps)``.

    ``reduce_axes`` lists the axes averaged over (the batch, and the point axes
    for per-point features). In training mode the batch statistic is used and,
    if given, ``running_ms`` is updated in place; in eval mode ``running_ms`` is
    used. ``scale`` is an optional positive per-channel multiplier.
    """
    x = ad.as_var(x)
    if not eps > 0:
        raise InvalidArgumentError("eps", eps, "must be positive")
    keep = tuple(a for a in range(1, x.ndim) if a not in reduce_axes)
    bshape = tuple(x.shape[a] if a in keep else 1 for a in range(1, x.ndim))
    if training:
        sq = ad.sum(x * x, axis=0)
        ms = ad.mean(sq, axis=tuple(a - 1 for a in reduce_axes), keepdims=True)
        if running_ms is not None:
            running_ms *= 1.0 - momentum
            running_ms += momentum * ms.value.reshape(running_ms.shape)
    else:
        if running_ms is None:
            raise InvalidArgumentError("running_ms", None, "required in eval mode")
        ms = Var(running_ms.reshape(bshape))
    denom = ad.sqrt(ms + eps)
    out = x / ad.reshape(denom, (1,) + bshape)
    if scale is not None:
        s = ad.as_var(scale)
        out = out * ad.reshape(s, (1,) + tuple(s.shape[0] if a == 1 else 1 for a in range(1, x.ndim)))
    return out


def qbatchnorm(batch, epsilon: float = 1e-5):
    """Norm-only batch normalization over a sequence of equal-shape QTensors.

    Element ``v`` of every sample is divided by
    ``sqrt(mean_j |f_v^(j)|^2 + epsilon)``; there is no additive shift.
    """
    batch = list(batch)
    if not batch:
        raise InvalidArgumentError("batch", batch, "must be non-empty")
    shape = batch[0].shape
    for t in batch[1:]:
        if t.shape != shape:
            raise ShapeMismatchError(shape, t.shape)
    stacked = np.stack([t.data for t in batch], axis=-1)
    out = qbatchnorm_var(stacked, epsilon, reduce_axes=(stacked.ndim - 1,)).value
    return [QTensor(out[..., j]) for j in range(len(batch))]


# -- max pooling --------------------------------------------------------------


def norm_argmax(values: np.ndarray, axis: int) -> np.ndarray:
    """Index of the largest-norm quaternion along ``axis`` of a ``(4, ...)`` array.

    Exact norm ties go to the lexicographically largest ``(x, y, z, w)``, which
    makes the choice independent of element order.
    """
    v = np.moveaxis(values, axis, -1)
    n = np.sqrt(np.sum(v * v, axis=0))
    keys = np.stack([v[0], v[3], v[2], v[1], n])
    order = np.lexsort(keys, axis=-1)
    return order[..., -1]


def norm_gap(values: np.ndarray, axis: int) -> np.ndarray:
    """Gap between the two largest norms along ``axis`` (inf if only one)."""
    v = np.moveaxis(values, axis, -1)
    n = np.sqrt(np.sum(v * v, axis=0))
    if n.shape[-1] < 2:
        return np.full(n.shape[:-1], np.inf)
    top = np.sort(n, axis=-1)
    return top[..., -1] - top[..., -2]


def _select_along(x: Var, idx: np.ndarray, axis: int) -> Var:
    """Pick ``x[..., idx, ...]`` along ``axis`` (> 0) for every other position."""
    shape = x.shape
    out_dims = [d for d in range(x.ndim) if d != axis]
    out_ndim = len(out_dims)
    index = []
    for d in range(x.ndim):
        if d == axis:
            index.append(np.asarray(idx)[None])
        else:
            p = out_dims.index(d)
            grid = np.arange(shape[d]).reshape([-1 if i == p else 1 for i in range(out_ndim)])
            index.append(grid)
    return ad.gather(x, tuple(index))


def qmaxpool_elementwise(f, axis: int = -1):
    """Per feature channel, keep the element with the largest norm along ``axis``.

    For a QTensor of shape ``(D, K)`` this returns shape ``(D,)``.
    """
    x, wrap = _lift(f)
    ax = axis % x.ndim
    if ax == 0:
        raise InvalidArgumentError("axis", axis, "cannot pool over the quaternion channel axis")
    if x.ndim < 2 or x.shape[ax] == 0 or x.shape[1] == 0:
        raise InvalidArgumentError("f", x.shape[1:], "pooling needs non-empty axes")
    idx = norm_argmax(x.value, ax)
    return wrap(_select_along(x, idx, ax))


def qmaxpool(f) -> Quaternion:
    """Largest-norm element of a 1-D QTensor."""
    if not isinstance(f, QTensor):
        f = QTensor(ad.value_of(f))
    if len(f.shape) != 1 or f.shape[0] == 0:
        raise InvalidArgumentError("f", f.shape, "expected a non-empty 1-D quaternion tensor")
    return f.item(int(norm_argmax(f.data, 1)))


# -- dropout ------------------------------------------------------------------


def dropout_mask(shape, p: float, rng: np.random.Generator, scale: bool = True) -> np.ndarray:
    """Real multiplier per quaternion element: 0 if dropped, else 1 or 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError("p", p, "must lie in [0, 1)")
    keep = rng.random(shape) >= p
    return keep * (1.0 / (1.0 - p) if scale else 1.0)


def qdropout(f, p: float, training: bool, rng: np.random.Generator | None = None,
             mask: np.ndarray | None = None, scale: bool = True):
    """Zero whole quaternion elements (all four channels) with probability ``p``."""
    x, wrap = _lift(f)
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError("p", p, "must lie in [0, 1)")
    if not training or p == 0.0:
        return wrap(x)
    if mask is None:
        if rng is None:
            raise InvalidArgumentError("rng", None, "training dropout needs a mask or an RNG stream")
        mask = dropout_mask(x.shape[1:], p, rng, scale)
    elif mask.shape != x.shape[1:]:
        raise ShapeMismatchError(x.shape[1:], mask.shape, "feature and mask shapes")
    return wrap(x * mask[None])


# -- non-equivariant counterparts ---------------------------------------------


def _channel_bias(x: Var, bias) -> Var:
    b = ad.as_var(bias)
    shape = b.shape + (1,) * (x.ndim - b.ndim)
    return x + ad.reshape(b, shape)


def conv_with_bias(weight, bias, f):
    """Convolution with a bias restored.

    ``bias`` has shape ``(Q, out)``: for quaternion features it is a pure
    quaternion per output channel (real part zero), which breaks
    equivariance; for real features (``Q == 1``) it is the ordinary bias.
    """
    x, wrap = _lift(f)
    y = ad.channel_mix(weight, x)
    return wrap(_channel_bias(y, bias))


def relu_componentwise(f):
    """Standard ReLU applied to every real channel independently."""
    x, wrap = _lift(f)
    return wrap(ad.relu(x))


def batchnorm_standard(x, eps: float, reduce_axes: tuple[int, ...], gamma, beta,
                       running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None,
                       training: bool = True, momentum: float = 0.1) -> Var:
    """Ordinary affine batch-norm over real ``(Q, C, ...)`` features."""
    x = ad.as_var(x)
    bshape = (1,) + tuple(x.shape[a] if a not in reduce_axes else 1 for a in range(1, x.ndim))
    axes = (0,) + tuple(reduce_axes)
    if training:
        mu = ad.mean(x, axis=axes, keepdims=True)
        centered = x - mu
        var = ad.mean(centered * centered, axis=axes, keepdims=True)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.value.reshape(running_mean.shape)
            running_var *= 1.0 - momentum
            running_var += momentum * var.value.reshape(running_var.shape)
    else:
        mu = Var(running_mean.reshape(bshape))
        var = Var(running_var.reshape(bshape))
        centered = x - mu
    out = centered / ad.sqrt(var + eps)
    g = ad.reshape(ad.as_var(gamma), bshape)
    b = ad.reshape(ad.as_var(beta), bshape)
    return out * g + b


def maxpool_standard(f, axis: int = -1):
    """Ordinary per-value max over ``axis`` for real features."""
    x, wrap = _lift(f) if isinstance(f, QTensor) else (ad.as_var(f), lambda v: v)
    ax = axis % x.ndim
    idx = np.argmax(x.value, axis=ax)
    shape = x.shape
    index = []
    for d in range(x.ndim):
        if d == ax:
            index.append(idx)
        else:
            p = [e for e in range(x.ndim) if e != ax].index(d)
            index.append(np.arange(shape[d]).reshape([-1 if i == p else 1 for i in range(x.ndim - 1)]))
    return wrap(ad.gather(x, tuple(index)))
