import math

import numpy as np
import pytest

from reqnn import autodiff as ad
from reqnn import layers as L
from reqnn.autodiff import Var
from reqnn.errors import InvalidArgumentError, ShapeMismatchError
from reqnn.quat import I, J, K, QTensor, Quaternion
from reqnn.rotations import random_rotor, rotate_array


def qt(*items):
    return QTensor.from_quaternions(items)


def rel_err(a, b):
    return np.max(np.sqrt(np.sum((a - b) ** 2, axis=0)) / (1 + np.sqrt(np.sum(b * b, axis=0))))


def fd_check(fn, inputs, rng, h=1e-4, tol=1e-4):
    """Compare backward gradients of ``sum(G * fn(*inputs))`` with central differences."""
    vars_ = [Var(x.copy(), requires_grad=True) for x in inputs]
    out = fn(*vars_)
    probe = rng.normal(size=out.shape)
    grads = ad.backward(ad.sum(out * probe), vars_)
    for k, x in enumerate(inputs):
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            hi, lo = [v.copy() for v in inputs], [v.copy() for v in inputs]
            hi[k][idx] += h
            lo[k][idx] -= h
            num[idx] = (np.sum(fn(*hi).value * probe) - np.sum(fn(*lo).value * probe)) / (2 * h)
        scale = max(1.0, np.max(np.abs(num)))
        assert np.max(np.abs(num - grads[k])) / scale <= tol


# -- examples ----------------------------------------------------------------


def test_qconv_examples():
    f = qt(I, J)
    assert L.qconv(np.eye(2), f) == f
    assert L.qconv(np.array([[1.0, 1.0]]), f).tolist() == [I + J]
    with pytest.raises(ShapeMismatchError):
        L.qconv(np.ones((2, 3)), f)


def test_qrelu_examples():
    assert L.qrelu(qt(0.5 * I, 2 * J), c=1.0).tolist() == [0.25 * I, 2 * J]
    with pytest.raises(InvalidArgumentError):
        L.qrelu(qt(I), c=0.0)
    with pytest.raises(InvalidArgumentError):
        L.LayerParams(relu_c=-1.0)


def test_qrelu_batch_mean():
    f = qt(I, 3 * J)  # mean norm 2
    out = L.qrelu(f, mode="batch_mean").tolist()
    assert out == [0.5 * I, 3 * J]


def test_qbatchnorm_examples():
    a, b = L.qbatchnorm([qt(2 * I), qt(Quaternion())], epsilon=1e-300)
    assert np.allclose(a.data, qt(math.sqrt(2) * I).data, atol=1e-15)
    assert b == qt(Quaternion())
    (single,) = L.qbatchnorm([qt(I)], epsilon=1e-5)
    assert np.allclose(single.data, qt(I).data / math.sqrt(1 + 1e-5), rtol=0, atol=1e-16)
    with pytest.raises(InvalidArgumentError):
        L.qbatchnorm([])


def test_qmaxpool_examples():
    assert L.qmaxpool(qt(3 * I, 4 * J, Quaternion())) == 4 * J
    assert L.qmaxpool(qt(5 * K)) == 5 * K
    with pytest.raises(InvalidArgumentError):
        L.qmaxpool(QTensor.zeros((0,)))
    row = QTensor(np.stack([qt(I, 2 * J, Quaternion()).data]).transpose(1, 0, 2))
    assert L.qmaxpool_elementwise(row).tolist() == [2 * J]
    grid = QTensor(np.stack([qt(3 * I, K).data, qt(J, 5 * K).data], axis=1))
    assert L.qmaxpool_elementwise(grid).tolist() == [3 * I, 5 * K]


def test_qmaxpool_tie_break_is_order_independent():
    f = [3 * I, 3 * J, 3 * K]
    picks = {L.qmaxpool(qt(*f[s:] + f[:s])) for s in range(3)}
    assert picks == {3 * I}


def test_qdropout_examples(rng):
    f = QTensor(rng.normal(size=(4, 6)))
    assert L.qdropout(f, 0.5, training=False) == f
    assert L.qdropout(f, 0.0, training=True, rng=rng) == f
    with pytest.raises(InvalidArgumentError):
        L.qdropout(f, 1.0, training=True, rng=rng)
    out = L.qdropout(f, 0.5, training=True, rng=np.random.default_rng(1)).data
    dropped = np.all(out == 0, axis=0)
    assert dropped.any() and not dropped.all()
    assert np.allclose(out[:, ~dropped], 2 * f.data[:, ~dropped])


def test_layer_params_has_no_bias():
    assert "bias" not in L.LayerParams.__dataclass_fields__
    with pytest.raises(InvalidArgumentError):
        L.LayerParams(bn_epsilon=0.0)


# -- equivariance --------------------------------------------------------------


def _equivariance_cases(rng):
    w = rng.normal(size=(5, 4))
    mask = L.dropout_mask((4, 3), 0.3, rng)
    return {
        "qconv": lambda x: L.qconv(w, x).value,
        "qrelu": lambda x: L.qrelu(x, c=1.0).value,
        "qrelu_batch_mean": lambda x: L.qrelu(x, mode="batch_mean").value,
        "qbatchnorm": lambda x: L.qbatchnorm_var(x, 1e-5, reduce_axes=(2,)).value,
        "qmaxpool_elementwise": lambda x: L.qmaxpool_elementwise(x, axis=2).value,
        "qdropout": lambda x: L.qdropout(x, 0.3, True, mask=mask).value,
    }


@pytest.mark.parametrize("name", ["qconv", "qrelu", "qrelu_batch_mean", "qbatchnorm",
                                  "qmaxpool_elementwise", "qdropout"])
def test_equivariance(name, rng):
    done = 0
    while done < 1000:
        op = _equivariance_cases(rng)[name]
        f = rng.normal(size=(4, 4, 3))
        f[0] = 0.0
        if name == "qmaxpool_elementwise" and np.min(L.norm_gap(f, 2)) < 1e-9:
            continue
        r = random_rotor(rng)
        assert rel_err(op(rotate_array(r, f)), rotate_array(r, op(f))) <= 1e-11
        done += 1


def test_qconv_linearity(rng):
    w = rng.normal(size=(3, 4))
    f, g = rng.normal(size=(2, 4, 4))
    a, b = rng.normal(size=2)
    lhs = L.qconv(w, a * f + b * g).value
    rhs = a * L.qconv(w, f).value + b * L.qconv(w, g).value
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_qrelu_non_expansive(rng):
    for c in (0.5, 1.0, 2.0):
        f = rng.normal(size=(4, 200)) * rng.uniform(0, 3, 200)
        n_in = np.linalg.norm(f, axis=0)
        n_out = np.linalg.norm(L.qrelu(f, c=c).value, axis=0)
        assert np.all(n_out <= n_in + 1e-15)
        small = n_in < c
        assert np.all(n_out[small] <= n_in[small] ** 2 / c + 1e-15)


def test_qbatchnorm_output_moment(rng):
    eps = 1e-3
    x = rng.normal(size=(4, 3, 8)) * rng.uniform(0.01, 2, size=(1, 3, 1))
    out = L.qbatchnorm_var(x, eps, reduce_axes=(2,)).value
    ms_in = np.mean(np.sum(x * x, axis=0), axis=1)
    ms_out = np.mean(np.sum(out * out, axis=0), axis=1)
    assert np.allclose(ms_out, ms_in / (ms_in + eps), atol=1e-10)
    assert np.all(ms_out <= 1)


def test_qbatchnorm_eval_uses_running_stat(rng):
    running = np.ones(3)
    x = rng.normal(size=(4, 3, 5))
    L.qbatchnorm_var(x, 1e-5, reduce_axes=(2,), running_ms=running, momentum=1.0)
    assert np.allclose(running, np.mean(np.sum(x * x, axis=0), axis=1))
    out = L.qbatchnorm_var(x, 1e-5, reduce_axes=(2,), running_ms=running, training=False).value
    again = L.qbatchnorm_var(x, 1e-5, reduce_axes=(2,)).value
    assert np.allclose(out, again)


# -- gradients -----------------------------------------------------------------


def test_gradients_match_finite_differences(rng):
    f = rng.normal(size=(4, 3, 2))
    w = rng.normal(size=(2, 3))
    fd_check(lambda w_, f_: L.qconv(w_, f_), [w, f], rng)
    fd_check(lambda f_: L.qrelu(f_ * 0.7, c=1.0), [f], rng)
    fd_check(lambda f_: L.qrelu(f_, mode="batch_mean"), [f], rng)
    fd_check(lambda f_: L.qbatchnorm_var(f_, 1e-5, reduce_axes=(2,)), [f], rng)
    fd_check(lambda f_: L.qmaxpool_elementwise(f_, axis=2), [f], rng)
    mask = L.dropout_mask((3, 2), 0.4, rng)
    fd_check(lambda f_: L.qdropout(f_, 0.4, True, mask=mask), [f], rng)


def test_norm_gradient_at_zero_is_zero():
    x = Var(np.zeros((4, 2)), requires_grad=True)
    (g,) = ad.backward(ad.sum(ad.qnorm(x)), [x])
    assert np.all(g == 0) and np.all(np.isfinite(g))


# -- twin counterparts break equivariance --------------------------------------


def test_biased_conv_and_componentwise_relu_not_equivariant(rng):
    f = rng.normal(size=(4, 3, 2))
    f[0] = 0
    r = random_rotor(rng)
    bias = np.zeros((4, 2))
    bias[1:] = rng.normal(size=(3, 2))
    w = rng.normal(size=(2, 3))
    biased = lambda x: L.conv_with_bias(w, bias, x).value
    assert rel_err(biased(rotate_array(r, f)), rotate_array(r, biased(f))) > 1e-3
    comp = lambda x: L.relu_componentwise(x).value
    assert rel_err(comp(rotate_array(r, f)), rotate_array(r, comp(f))) > 1e-3
