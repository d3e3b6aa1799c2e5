import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reqnn.errors import ShapeMismatchError
from reqnn.quat import (I, J, K, ONE, QTensor, Quaternion, hamilton, qconj, qmul, qnorm, qt_add,
                        qt_conj, qt_map, qt_mul, qt_norm, qt_scale, qt_zip)

from conftest import basis_mul, qclose, rand_q

finite = st.floats(-1e3, 1e3, allow_nan=False)
quats = st.builds(Quaternion, finite, finite, finite, finite)


def test_basis_products():
    assert qmul(I, J) == K
    assert qmul(J, I) == -K
    assert qmul(I, J) != qmul(J, I)
    assert qmul(Quaternion(1, 1), Quaternion(1, 0, 1)) == Quaternion(1, 1, 1, 1)


@given(quats, quats)
def test_qmul_matches_table(p, q):
    assert qclose(qmul(p, q), basis_mul(p, q), tol=1e-9)


def test_conj_examples():
    assert qconj(Quaternion(1, 2, 3, 4)) == Quaternion(1, -2, -3, -4)
    assert qconj(Quaternion()) == Quaternion()
    q = Quaternion(1, 1)
    assert qmul(q, qconj(q)) == Quaternion(2.0)


@given(quats)
def test_conj_involution(q):
    assert qconj(qconj(q)) == q


def test_norm_examples():
    assert qnorm(Quaternion(1, 1, 1, 1)) == 2.0
    assert qnorm(Quaternion()) == 0.0


def test_algebra_properties(rng):
    for _ in range(10_000):
        p, q, r = rand_q(rng), rand_q(rng), rand_q(rng)
        left = qmul(qmul(p, q), r).as_array()
        right = qmul(p, qmul(q, r)).as_array()
        assert np.linalg.norm(left - right) <= 1e-12 * max(1.0, np.linalg.norm(left))
    for _ in range(1000):
        p, q = rand_q(rng), rand_q(rng)
        np_nq = qnorm(p) * qnorm(q)
        assert abs(qnorm(qmul(p, q)) - np_nq) <= 1e-12 * np_nq
        assert qclose(qconj(qmul(p, q)), qmul(qconj(q), qconj(p)))


def test_array_product_matches_scalar(rng):
    a, b = rng.normal(size=(4, 5, 3)), rng.normal(size=(4, 5, 3))
    out = hamilton(a, b)
    for idx in np.ndindex(5, 3):
        ref = basis_mul(Quaternion.from_array(a[(slice(None),) + idx]),
                        Quaternion.from_array(b[(slice(None),) + idx]))
        assert np.allclose(out[(slice(None),) + idx], ref.as_array(), atol=1e-12)


def test_pure_flag():
    assert Quaternion.pure(1, 2, 3).is_pure
    t = QTensor.from_points([[1.0, 2.0, 3.0]])
    assert t.pure and t.shape == (1,)
    with pytest.raises(ValueError):
        QTensor([[1.0], [0.0], [0.0], [0.0]], pure=True)


def test_tensor_ops():
    a = QTensor.from_quaternions([I, J])
    b = QTensor.from_quaternions([J, K])
    assert qt_add(a, b).tolist() == [I + J, J + K]
    assert qt_norm(QTensor.from_quaternions([3 * I, 4 * J])).tolist() == [3.0, 4.0]
    assert qt_scale(QTensor.from_quaternions([ONE + K]), 2).tolist() == [Quaternion(2, 0, 0, 2)]
    assert qt_conj(a).tolist() == [-I, -J]
    assert qt_mul(a, b).tolist() == [K, I]
    assert qt_map(a, lambda d: -d).tolist() == [-I, -J]


def test_tensor_shape_mismatch_names_shapes():
    a = QTensor.zeros((2,))
    b = QTensor.zeros((3,))
    with pytest.raises(ShapeMismatchError, match=r"\(2,\).*\(3,\)"):
        qt_zip(a, b, np.add)


def test_zero_extent():
    t = QTensor.zeros((0,))
    assert t.size == 0
    assert qt_add(t, t).shape == (0,)
    assert qt_norm(t).shape == (0,)


def test_tensor_immutable():
    t = QTensor.zeros((2,))
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0


def test_norm_nonnegative_zero_iff_zero():
    assert qnorm(Quaternion(0, 0, 0, 1e-300)) > 0
    assert math.isclose(qnorm(Quaternion(3, 4)), 5.0)
