"""Quaternion scalars and quaternion tensors.

Quaternion tensors are stored structure-of-arrays: one ``(4, *shape)`` float64
array whose leading axis holds the ``w, x, y, z`` channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import InvalidArgumentError, ShapeMismatchError

W, X, Y, Z = 0, 1, 2, 3


@dataclass(frozen=True)
class Quaternion:
    w: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def pure(cls, x: float, y: float, z: float) -> "Quaternion":
        return cls(0.0, float(x), float(y), float(z))

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        w, x, y, z = (float(v) for v in np.asarray(a, dtype=np.float64).reshape(4))
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @property
    def is_pure(self) -> bool:
        return self.w == 0.0

    @property
    def vector(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def conj(self) -> "Quaternion":
        return qconj(self)

    def norm(self) -> float:
        return qnorm(self)

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w + other.w, self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w - other.w, self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return qmul(self, other)
        s = float(other)
        return Quaternion(s * self.w, s * self.x, s * self.y, s * self.z)

    def __rmul__(self, other):
        s = float(other)
        return Quaternion(s * self.w, s * self.x, s * self.y, s * self.z)

    def __repr__(self) -> str:
        return f"Quaternion({self.w!r}, {self.x!r}i, {self.y!r}j, {self.z!r}k)"


ONE = Quaternion(1.0)
I = Quaternion(0.0, 1.0)
J = Quaternion(0.0, 0.0, 1.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


def qmul(p: Quaternion, q: Quaternion) -> Quaternion:
    """Hamilton product ``p q``."""
    return Quaternion(
        p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
        p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
        p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
        p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
    )


def qconj(q: Quaternion) -> Quaternion:
    return Quaternion(q.w, -q.x, -q.y, -q.z)


def qnorm(q: Quaternion) -> float:
    return math.hypot(q.w, q.x, q.y, q.z)  # scaled, so tiny nonzero inputs do not underflow to 0


def hamilton(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Channel-wise Hamilton product of two broadcastable ``(4, ...)`` arrays."""
    p0, p1, p2, p3 = p[0], p[1], p[2], p[3]
    q0, q1, q2, q3 = q[0], q[1], q[2], q[3]
    return np.stack(
        [
            p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
            p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
            p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
            p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
        ]
    )


def conj_array(a: np.ndarray) -> np.ndarray:
    out = -np.asarray(a, dtype=np.float64)
    out[0] = -out[0]
    return out


class QTensor:
    """Immutable N-dimensional array of quaternions.

    ``data`` has shape ``(4, *shape)``. A tensor flagged ``pure`` has an
    all-zero real channel; the flag is checked at construction.
    """

    __slots__ = ("_data", "_pure")

    def __init__(self, data, pure: bool | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim < 1 or arr.shape[0] != 4:
            raise InvalidArgumentError("data", arr.shape, "leading axis must hold 4 channels")
        arr.setflags(write=False)
        is_zero_w = not np.any(arr[0])
        if pure is None:
            pure = is_zero_w
        elif pure and not is_zero_w:
            raise InvalidArgumentError("pure", pure, "real channel is not exactly zero")
        self._data = arr
        self._pure = bool(pure)

    @classmethod
    def from_points(cls, xyz) -> "QTensor":
        """Pure quaternion tensor from an ``(..., 3)`` coordinate array."""
        xyz = np.asarray(xyz, dtype=np.float64)
        if xyz.shape[-1:] != (3,):
            raise InvalidArgumentError("xyz", xyz.shape, "last axis must have length 3")
        data = np.zeros((4,) + xyz.shape[:-1])
        data[1:] = np.moveaxis(xyz, -1, 0)
        return cls(data, pure=True)

    @classmethod
    def from_quaternions(cls, items: Iterable[Quaternion]) -> "QTensor":
        items = list(items)
        data = np.array([[q.w, q.x, q.y, q.z] for q in items], dtype=np.float64).reshape(-1, 4).T
        return cls(data)

    @classmethod
    def zeros(cls, shape) -> "QTensor":
        return cls(np.zeros((4,) + tuple(shape)), pure=True)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape[1:]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def pure(self) -> bool:
        return self._pure

    def to_points(self) -> np.ndarray:
        """Imaginary parts as an ``(*shape, 3)`` array."""
        return np.moveaxis(self._data[1:], 0, -1).copy()

    def item(self, *index) -> Quaternion:
        return Quaternion.from_array(self._data[(slice(None),) + index])

    def tolist(self) -> list[Quaternion]:
        flat = self._data.reshape(4, -1)
        return [Quaternion.from_array(flat[:, i]) for i in range(flat.shape[1])]

    def __len__(self) -> int:
        return self.shape[0] if self.shape else 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, QTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __add__(self, other: "QTensor") -> "QTensor":
        return qt_add(self, other)

    def __sub__(self, other: "QTensor") -> "QTensor":
        return qt_zip(self, other, np.subtract)

    def __mul__(self, scalar) -> "QTensor":
        return qt_scale(self, scalar)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"QTensor(shape={self.shape}, pure={self._pure})"


def _check_same_shape(a: QTensor, b: QTensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(a.shape, b.shape)


def qt_map(t: QTensor, fn: Callable[[np.ndarray], np.ndarray]) -> QTensor:
    """Apply a channel-array function ``(4, ...) -> (4, ...)`` element-wise."""
    return QTensor(fn(t.data))


def qt_zip(a: QTensor, b: QTensor, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> QTensor:
    _check_same_shape(a, b)
    return QTensor(fn(a.data, b.data))


def qt_add(a: QTensor, b: QTensor) -> QTensor:
    return qt_zip(a, b, np.add)


def qt_scale(t: QTensor, scalar) -> QTensor:
    """Real scalar (or per-element real array) times each quaternion."""
    s = np.asarray(scalar, dtype=np.float64)
    if s.ndim and s.shape != t.shape:
        raise ShapeMismatchError(t.shape, s.shape, "tensor and scale shapes")
    return QTensor(t.data * s, pure=t.pure or None)


def qt_conj(t: QTensor) -> QTensor:
    return QTensor(conj_array(t.data))


def qt_mul(a: QTensor, b: QTensor) -> QTensor:
    """Element-wise Hamilton product."""
    _check_same_shape(a, b)
    return QTensor(hamilton(a.data, b.data))


def qt_norm(t: QTensor) -> np.ndarray:
    return np.sqrt(np.sum(t.data * t.data, axis=0))
