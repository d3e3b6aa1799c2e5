import math

import numpy as np
import pytest

from reqnn import autodiff as ad
from reqnn import layers as L
from reqnn.autodiff import Var
from reqnn.errors import InvalidArgumentError, ShapeMismatchError, TapeError
from reqnn.q2r import TaskHeadParams, cross_entropy, quaternion_to_real, real_linear, softmax_cross_entropy
from reqnn.quat import QTensor, Quaternion
from reqnn.rotations import random_rotor, rotate_array


def test_bridge_examples(rng):
    t = QTensor.from_quaternions([Quaternion(0, 1, 2, 2), Quaternion()])
    assert quaternion_to_real(t).tolist() == [9.0, 0.0]
    for _ in range(100):
        f = rng.normal(size=(4, 5))
        r = random_rotor(rng)
        a = quaternion_to_real(QTensor(rotate_array(r, f)))
        b = quaternion_to_real(QTensor(f))
        assert np.max(np.abs(a - b) / (1 + np.abs(b))) <= 1e-11


def test_real_linear_examples(rng):
    x = rng.normal(size=4)
    assert np.array_equal(real_linear(np.eye(4), np.zeros(4), x).value, x)
    b = rng.normal(size=3)
    assert np.array_equal(real_linear(np.zeros((3, 4)), b, x).value, b)
    with pytest.raises(ShapeMismatchError):
        real_linear(np.zeros((3, 5)), b, x)


def test_real_linear_gradcheck(rng):
    w, b, x = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=(4, 2))
    vs = [Var(a, requires_grad=True) for a in (w, b, x)]
    probe = rng.normal(size=(3, 2))
    grads = ad.backward(ad.sum(real_linear(*vs) * probe), vs)
    h = 1e-4
    for k, arr in enumerate((w, b, x)):
        for idx in np.ndindex(arr.shape):
            hi = [a.copy() for a in (w, b, x)]
            lo = [a.copy() for a in (w, b, x)]
            hi[k][idx] += h
            lo[k][idx] -= h
            num = (np.sum(real_linear(*hi).value * probe) - np.sum(real_linear(*lo).value * probe)) / (2 * h)
            assert abs(num - grads[k][idx]) <= 1e-4 * max(1, abs(num))


def test_cross_entropy_examples(rng):
    loss, grad = softmax_cross_entropy(np.zeros(2), 0)
    assert math.isclose(loss, math.log(2), rel_tol=1e-15)
    assert np.allclose(grad, [-0.5, 0.5])
    loss, _ = softmax_cross_entropy(np.array([800.0, 0.0]), 0)
    assert loss == 0.0
    with pytest.raises(InvalidArgumentError):
        softmax_cross_entropy(np.zeros(3), 3)
    z = rng.normal(size=(4, 5))
    labels = rng.integers(0, 4, 5)
    loss, grad = softmax_cross_entropy(z, labels)
    assert loss >= 0
    assert np.allclose(grad.sum(axis=0), 0, atol=1e-15)
    h = 1e-6
    for idx in np.ndindex(z.shape):
        hi, lo = z.copy(), z.copy()
        hi[idx] += h
        lo[idx] -= h
        num = (softmax_cross_entropy(hi, labels)[0] - softmax_cross_entropy(lo, labels)[0]) / (2 * h)
        assert abs(num - grad[idx]) <= 1e-6
    v = Var(z, requires_grad=True)
    (g,) = ad.backward(cross_entropy(v, labels), [v])
    assert np.allclose(g, grad, atol=1e-14)


def test_end_to_end_invariance(rng):
    w1, w2 = rng.normal(size=(6, 1)), rng.normal(size=(5, 6))
    head = TaskHeadParams.init([5, 8, 8, 3], rng)
    def logits(f):
        x = L.qrelu(L.qconv(w1, f))
        x = L.qmaxpool_elementwise(L.qconv(w2, x), axis=2)
        return head(quaternion_to_real(x)).value
    for _ in range(50):
        f = rng.normal(size=(4, 1, 10))
        f[0] = 0
        r = random_rotor(rng)
        a, b = logits(rotate_array(r, f)), logits(f)
        assert np.max(np.abs(a - b)) / (1 + np.max(np.abs(b))) <= 1e-9


def test_head_dimension_chain(rng):
    a = TaskHeadParams.init([4, 3], rng).layers[0]
    b = TaskHeadParams.init([5, 2], rng).layers[0]
    with pytest.raises(ShapeMismatchError):
        TaskHeadParams([a, b])


def test_backward_rejects_non_scalar():
    with pytest.raises(TapeError):
        ad.backward(Var(np.ones(2)), [])
