import numpy as np
import pytest

from reqnn.quat import Quaternion


def basis_mul(p, q):
    """Reference product built from the unit multiplication table."""
    table = {
        ("1", "1"): (1, "1"), ("1", "i"): (1, "i"), ("1", "j"): (1, "j"), ("1", "k"): (1, "k"),
        ("i", "1"): (1, "i"), ("i", "i"): (-1, "1"), ("i", "j"): (1, "k"), ("i", "k"): (-1, "j"),
        ("j", "1"): (1, "j"), ("j", "i"): (-1, "k"), ("j", "j"): (-1, "1"), ("j", "k"): (1, "i"),
        ("k", "1"): (1, "k"), ("k", "i"): (1, "j"), ("k", "j"): (-1, "i"), ("k", "k"): (-1, "1"),
    }
    units = "1ijk"
    a = dict(zip(units, (p.w, p.x, p.y, p.z)))
    b = dict(zip(units, (q.w, q.x, q.y, q.z)))
    out = dict.fromkeys(units, 0.0)
    for u in units:
        for v in units:
            sign, unit = table[(u, v)]
            out[unit] += sign * a[u] * b[v]
    return Quaternion(out["1"], out["i"], out["j"], out["k"])


def rodrigues(axis, theta):
    """Rotation matrix from axis-angle without quaternions."""
    o = np.asarray(axis, dtype=float)
    o = o / np.linalg.norm(o)
    k = np.array([[0, -o[2], o[1]], [o[2], 0, -o[0]], [-o[1], o[0], 0]])
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * k @ k


def rand_q(rng):
    return Quaternion.from_array(rng.normal(size=4))


def qclose(a, b, tol=1e-12):
    return np.allclose(a.as_array(), b.as_array(), rtol=0, atol=tol)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
