"""Unit-quaternion rotors and their sandwich action on quaternions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .quat import Quaternion, QTensor, conj_array, hamilton, qconj, qmul, qnorm

PURE_CLAMP = 1e-12


@dataclass(frozen=True)
class Rotor:
    """Rotation by ``angle`` radians about the unit ``axis``, as a unit quaternion."""

    q: Quaternion
    axis: tuple[float, float, float]
    angle: float

    @classmethod
    def from_quaternion(cls, q: Quaternion) -> "Rotor":
        n = qnorm(q)
        if n == 0.0:
            raise InvalidArgumentError("q", q, "zero quaternion is not a rotation")
        q = q * (1.0 / n)
        s = math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z)
        if s == 0.0:
            return cls(q, (0.0, 0.0, 1.0), 0.0 if q.w > 0 else 2.0 * math.pi)
        return cls(q, (q.x / s, q.y / s, q.z / s), 2.0 * math.atan2(s, q.w))

    @property
    def array(self) -> np.ndarray:
        return self.q.as_array()

    def inverse(self) -> "Rotor":
        return Rotor.from_quaternion(qconj(self.q))

    def matrix(self) -> np.ndarray:
        """Equivalent 3x3 rotation matrix (used for cross-checks and geometry)."""
        w, x, y, z = self.q.w, self.q.x, self.q.y, self.q.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )


IDENTITY = Rotor(Quaternion(1.0), (0.0, 0.0, 1.0), 0.0)


def rotor_from_axis_angle(axis, theta: float) -> Rotor:
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    length = float(np.linalg.norm(axis))
    if length == 0.0 or not math.isfinite(length):
        raise InvalidArgumentError("axis", tuple(axis), "must have finite nonzero length")
    if not math.isfinite(theta):
        raise InvalidArgumentError("theta", theta, "must be finite")
    o = axis / length
    theta = float(theta) % (2.0 * math.pi)
    half = 0.5 * theta
    s = math.sin(half)
    q = Quaternion(math.cos(half), s * o[0], s * o[1], s * o[2])
    q = q * (1.0 / qnorm(q))
    return Rotor(q, (float(o[0]), float(o[1]), float(o[2])), theta)


def rotate(r: Rotor, q: Quaternion) -> Quaternion:
    """Sandwich product ``R q R̄``; pure inputs stay exactly pure."""
    out = qmul(qmul(r.q, q), qconj(r.q))
    if q.w == 0.0 and abs(out.w) <= PURE_CLAMP:
        out = Quaternion(0.0, out.x, out.y, out.z)
    return out


def rotate_array(r: Rotor | np.ndarray, data: np.ndarray) -> np.ndarray:
    """Sandwich product applied to every element of a ``(4, ...)`` array.

    Elements whose input real part is exactly zero get their output real part
    clamped to zero when it is below ``PURE_CLAMP``.
    """
    rq = r.array if isinstance(r, Rotor) else np.asarray(r, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    rb = rq.reshape((4,) + (1,) * (data.ndim - 1))
    out = hamilton(hamilton(rb, data), conj_array(rb))
    clamp = (data[0] == 0.0) & (np.abs(out[0]) <= PURE_CLAMP)
    out[0] = np.where(clamp, 0.0, out[0])
    return out


def rotate_tensor(r: Rotor, t: QTensor) -> QTensor:
    return QTensor(rotate_array(r, t.data), pure=t.pure or None)


def rotate_points(r: Rotor, xyz: np.ndarray) -> np.ndarray:
    """Rotate an ``(..., 3)`` coordinate array through the quaternion sandwich."""
    xyz = np.asarray(xyz, dtype=np.float64)
    data = np.concatenate([np.zeros((1,) + xyz.shape[:-1]), np.moveaxis(xyz, -1, 0)])
    return np.moveaxis(rotate_array(r, data)[1:], 0, -1)


def compose(r2: Rotor, r1: Rotor) -> Rotor:
    """Rotor for "apply ``r1`` then ``r2``"."""
    return Rotor.from_quaternion(qmul(r2.q, r1.q))


def random_rotor(rng: np.random.Generator) -> Rotor:
    """Uniform rotation: a normalized 4D standard Gaussian sample."""
    while True:
        v = rng.standard_normal(4)
        n = float(np.linalg.norm(v))
        if n > 1e-8:
            return Rotor.from_quaternion(Quaternion.from_array(v / n))
