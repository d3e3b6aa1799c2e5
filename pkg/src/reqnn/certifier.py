"""Numerical certificates for symmetry properties and gradient correctness.

Every certificate runs seeded, independent trials and reports the worst
relative error together with reproducible counterexamples. Trial ``t`` of a
run with base seed ``s`` draws from ``default_rng(trial_seed(s, t))``, so any
failure can be replayed from the seed stored in the report.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import geometry as geo
from . import layers as L
from .data import parallel_map
from .errors import DegenerateFrameError, InvalidArgumentError, SpecError
from .network.model import Network
from .network.spec import NetworkSpec, QConv, QReLU
from .network.training import batch_loss
from .rotations import IDENTITY, Rotor, random_rotor, rotate_array, rotate_points

LAYER_TOL = 1e-11
NETWORK_TOL = 1e-9
PERMUTATION_TOL = 1e-6
GRADIENT_TOL = 1e-4
TIE_GAP = 1e-9
MAX_RESAMPLES = 100
ULP_SLACK = 8


class Failure(BaseModel):
    seed: int
    digest: str
    error: float


class CertReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subject: str
    property: str
    trials: int = Field(ge=1)
    tolerance: float = Field(ge=0)
    seed: int
    max_relative_error: float
    failures: list[Failure] = Field(default_factory=list)
    ties_resampled: int = 0
    verdict: Literal["pass", "fail"]

    @model_validator(mode="after")
    def _consistent(self):
        ok = not self.failures and self.max_relative_error <= self.tolerance
        if (self.verdict == "pass") != ok:
            raise ValueError("verdict must be 'pass' exactly when there are no failures within tolerance")
        return self

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


class Tie(Exception):
    """The drawn input sits on a selection boundary; draw another one."""


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=np.float64)).tobytes())
    return h.hexdigest()[:16]


def quaternion_error(lhs, rhs) -> float:
    """max over elements of |lhs - rhs| / (1 + |rhs|), norms taken over axis 0."""
    lhs, rhs = np.asarray(lhs, dtype=np.float64), np.asarray(rhs, dtype=np.float64)
    if lhs.shape != rhs.shape:
        return math.inf
    if lhs.size == 0:
        return 0.0
    d = np.sqrt(np.sum((lhs - rhs) ** 2, axis=0))
    n = np.sqrt(np.sum(rhs * rhs, axis=0))
    return _finite_max(d / (1.0 + n))


def real_error(lhs, rhs) -> float:
    lhs, rhs = np.asarray(lhs, dtype=np.float64), np.asarray(rhs, dtype=np.float64)
    if lhs.shape != rhs.shape:
        return math.inf
    if lhs.size == 0:
        return 0.0
    return _finite_max(np.abs(lhs - rhs) / (1.0 + np.abs(rhs)))


def _finite_max(a: np.ndarray) -> float:
    m = float(np.max(a))
    return math.inf if math.isnan(m) else m


def run_trials(subject: str, prop: str, trials: int, tol: float, seed: int,
               trial: Callable[[np.random.Generator], tuple[float, str]], parallel: bool = True) -> CertReport:
    """Run ``trial`` once per seed; a ``Tie`` draws again from the same stream."""
    if trials < 1:
        raise InvalidArgumentError("trials", trials, "must be at least 1")

    def one(t: int):
        ts = trial_seed(seed, t)
        rng = np.random.default_rng(ts)
        for ties in range(MAX_RESAMPLES):
            try:
                err, dig = trial(rng)
                return ts, dig, err, ties
            except (Tie, DegenerateFrameError):
                continue
        raise RuntimeError(f"{subject}: {MAX_RESAMPLES} consecutive degenerate draws")

    results = parallel_map(one, list(range(trials))) if parallel else [one(t) for t in range(trials)]
    failures = [Failure(seed=ts, digest=d, error=e) for ts, d, e, _ in results if not e <= tol]
    worst = max(e for _, _, e, _ in results)
    return CertReport(subject=subject, property=prop, trials=trials, tolerance=tol, seed=seed,
                      max_relative_error=worst, failures=failures,
                      ties_resampled=sum(r[3] for r in results),
                      verdict="pass" if not failures and worst <= tol else "fail")


# -- layer subjects ------------------------------------------------------------


def _features(rng, shape, pure: bool = False) -> np.ndarray:
    """Random quaternions whose norms spread over a few orders of magnitude."""
    f = rng.standard_normal((4,) + tuple(shape))
    f *= np.exp(rng.uniform(-1.5, 1.5, shape))[None]
    if pure:
        f[0] = 0.0
    return f


def _anisotropic(rng, k: int) -> np.ndarray:
    """Points with clearly separated principal spreads, in a random orientation."""
    pts = rng.standard_normal((k, 3)) * np.array([3.0, 2.0, 1.0])
    return rotate_points(random_rotor(rng), pts)


def _check_ties(values: np.ndarray, axis: int) -> None:
    if np.any(L.norm_gap(values, axis) < TIE_GAP):
        raise Tie()


@dataclass(frozen=True)
class LayerSubject:
    """A layer under test: ``draw`` returns inputs, ``apply`` maps (inputs, rotor) to an output.

    ``apply(inputs, r)`` must evaluate the layer on inputs rotated by ``r``
    (quaternion features and any coordinates alike).
    """

    name: str
    draw: Callable[[np.random.Generator], dict]
    apply: Callable[[dict, Rotor], np.ndarray]


def _rot(r: Rotor, f: np.ndarray) -> np.ndarray:
    return f if r is IDENTITY else rotate_array(r, f)


def _draw_conv(rng):
    cin, cout, n = rng.integers(1, 9), rng.integers(1, 9), rng.integers(1, 17)
    return {"w": rng.standard_normal((cout, cin)), "f": _features(rng, (cin, n)),
            "b": rng.standard_normal((3, cout))}


def _draw_plain(rng):
    return {"f": _features(rng, (rng.integers(1, 9), rng.integers(1, 17)))}


def _draw_bn(rng):
    return {"f": _features(rng, (rng.integers(1, 9), rng.integers(2, 5), rng.integers(1, 9)))}


def _draw_pool(rng):
    f = _features(rng, (rng.integers(1, 9), rng.integers(1, 17)))
    _check_ties(f, 2)
    return {"f": f}


def _draw_pool1d(rng):
    f = _features(rng, (rng.integers(1, 33),))
    _check_ties(f, 1)
    return {"f": f}


def _draw_dropout(rng):
    d = _draw_plain(rng)
    d["mask"] = L.dropout_mask(d["f"].shape[1:], 0.3, rng)
    return d


def _draw_coords_weighting(rng):
    k = int(rng.integers(8, 33))
    return {"pts": _anisotropic(rng, k), "f": _features(rng, (k, rng.integers(1, 6))),
            "net": geo.WeightNet.init(rng)}


def _draw_density(rng):
    k = int(rng.integers(4, 33))
    return {"pts": rng.standard_normal((k, 3)), "f": _features(rng, (k, rng.integers(1, 6)))}


def _apply_coords_weighting(d, r):
    pts = d["pts"] if r is IDENTITY else rotate_points(r, d["pts"])
    _, local = geo.pca_lrf(pts)
    return geo.coords_weighting(local, d["net"], _rot(r, d["f"])).value


def _apply_density(d, r):
    pts = d["pts"] if r is IDENTITY else rotate_points(r, d["pts"])
    return geo.density_weighting(pts, _rot(r, d["f"])).value


LAYER_SUBJECTS: dict[str, LayerSubject] = {
    s.name: s
    for s in [
        LayerSubject("identity", _draw_plain, lambda d, r: _rot(r, d["f"])),
        LayerSubject("qconv", _draw_conv, lambda d, r: L.qconv(d["w"], _rot(r, d["f"])).value),
        LayerSubject("qrelu", _draw_plain, lambda d, r: L.qrelu(_rot(r, d["f"]), 1.0, "constant").value),
        LayerSubject("qrelu_batch_mean", _draw_plain,
                     lambda d, r: L.qrelu(_rot(r, d["f"]), mode="batch_mean").value),
        LayerSubject("qbatchnorm", _draw_bn, lambda d, r: L.qbatchnorm_var(_rot(r, d["f"]), 1e-5, (2, 3)).value),
        LayerSubject("qmaxpool", _draw_pool1d,
                     lambda d, r: L.qmaxpool(_rot(r, d["f"])).as_array()),
        LayerSubject("qmaxpool_elementwise", _draw_pool,
                     lambda d, r: L.qmaxpool_elementwise(_rot(r, d["f"]), axis=-1).value),
        LayerSubject("qdropout", _draw_dropout,
                     lambda d, r: L.qdropout(_rot(r, d["f"]), 0.3, True, mask=d["mask"]).value),
        LayerSubject("coords_weighting", _draw_coords_weighting, _apply_coords_weighting),
        LayerSubject("density_weighting", _draw_density, _apply_density),
        # equivariance-breaking mutations
        LayerSubject("qconv_bias", _draw_conv,
                     lambda d, r: L.conv_with_bias(d["w"], np.vstack([np.zeros((1, d["b"].shape[1])), d["b"]]),
                                                   _rot(r, d["f"])).value),
        LayerSubject("relu_componentwise", _draw_plain, lambda d, r: L.relu_componentwise(_rot(r, d["f"])).value),
    ]
}

LAYER_SUITE = ("qconv", "qrelu", "qrelu_batch_mean", "qbatchnorm", "qmaxpool", "qmaxpool_elementwise",
               "qdropout", "coords_weighting", "density_weighting")
LAYER_MUTATIONS = ("qconv_bias", "relu_componentwise")


def certify_layer_equivariance(layer, trials: int = 1000, tol: float = LAYER_TOL, seed: int = 0,
                               rotor: Optional[Rotor] = None) -> CertReport:
    """Compare ``layer(R f R~)`` with ``R layer(f) R~`` on random inputs and rotors.

    ``layer`` is a subject name from ``LAYER_SUBJECTS`` or a ``LayerSubject``.
    A fixed ``rotor`` replaces the random one.
    """
    subject = LAYER_SUBJECTS[layer] if isinstance(layer, str) else layer

    def trial(rng):
        d = subject.draw(rng)
        r = rotor if rotor is not None else random_rotor(rng)
        lhs = subject.apply(d, r)
        rhs = _rot(r, subject.apply(d, IDENTITY))
        return quaternion_error(lhs, rhs), digest(*(v for v in d.values() if isinstance(v, np.ndarray)))

    return run_trials(subject.name, "layer_equivariance", trials, tol, seed, trial)


# -- network certificates -----------------------------------------------------


def _random_cloud(rng, n: int) -> np.ndarray:
    return rng.standard_normal((n, 3)) * rng.uniform(0.5, 1.5, 3)


def certify_network_equivariance(net: Network, trials: int = 100, tol: float = NETWORK_TOL, seed: int = 0,
                                 rotor: Optional[Rotor] = None) -> CertReport:
    """End-to-end check at the bridge input, or at the output of a fully quaternion net."""
    if net.twin or net.bridge_index == 0:
        raise SpecError(None, "network has no quaternion module to certify")

    def trial(rng):
        x = _random_cloud(rng, net.spec.n_points)
        r = rotor if rotor is not None else random_rotor(rng)
        lhs = net.quaternion_features(rotate_points(r, x)).value
        rhs = rotate_array(r, net.quaternion_features(x).value)
        return quaternion_error(lhs, rhs), digest(x, r.array)

    return run_trials(net.spec.name, "network_equivariance", trials, tol, seed, trial)


def certify_output_invariance(net: Network, trials: int = 100, tol: float = NETWORK_TOL, seed: int = 0,
                              rotor: Optional[Rotor] = None) -> CertReport:
    """Logits under rotated inputs against the original logits."""
    if net.bridge_index is None:
        raise SpecError(None, "output invariance needs a Quaternion2Real bridge")

    def trial(rng):
        x = _random_cloud(rng, net.spec.n_points)
        r = rotor if rotor is not None else random_rotor(rng)
        return real_error(net.forward(rotate_points(r, x)).value, net.forward(x).value), digest(x, r.array)

    return run_trials(net.spec.name, "output_invariance", trials, tol, seed, trial)


def certify_decoder_equivariance(net: Network, trials: int = 100, tol: float = NETWORK_TOL, seed: int = 0,
                                 rotor: Optional[Rotor] = None) -> CertReport:
    """``decode(R z R~)`` against ``R decode(z) R~`` for bottleneck features ``z``."""
    if net.spec.tap is None or net.twin:
        raise SpecError(None, "decoder equivariance needs a quaternion bottleneck tap")

    def trial(rng):
        x = _random_cloud(rng, net.spec.n_points)
        r = rotor if rotor is not None else random_rotor(rng)
        z = net.encode(x).value
        lhs = net.decode(rotate_array(r, z)).value
        rhs = rotate_array(r, net.decode(z).value)
        return quaternion_error(lhs, rhs), digest(x, r.array)

    return run_trials(net.spec.name, "decoder_equivariance", trials, tol, seed, trial)


# -- permutation invariance ----------------------------------------------------


def _rows(xyz: np.ndarray, idx: np.ndarray) -> list:
    return sorted(map(tuple, xyz[idx].reshape(-1, 3).tolist()))


def _fps_structure(xyz, variant="centroid"):
    return sorted(map(tuple, xyz[geo.centroid_fps(xyz, 8, seed=variant)].tolist()))


def _ball_structure(xyz, padding="nearest", radius=0.9, k=8):
    centers = geo.centroid_fps(xyz, 6)
    groups = geo.group_ball_knn(xyz, centers, radius, k, padding=padding)
    return sorted((tuple(xyz[c]), tuple(_rows(xyz, g))) for c, g in zip(centers, groups.groups))


def _knn_structure(xyz, k=6):
    centers = geo.centroid_fps(xyz, 6)
    groups = geo.group_knn(xyz, centers, k)
    return sorted((tuple(xyz[c]), tuple(_rows(xyz, g))) for c, g in zip(centers, groups.groups))


def _graph_structure(xyz, k=5):
    edges = geo.knn_graph(xyz, k)
    return sorted((tuple(xyz[u]), tuple(xyz[v])) for u, v in edges)


GEOMETRY_SUBJECTS: dict[str, Callable[[np.ndarray], object]] = {
    "centroid_fps": _fps_structure,
    "group_ball_knn": _ball_structure,
    "group_knn": _knn_structure,
    "knn_graph": _graph_structure,
    # order-dependent classical variants
    "first_point_fps": lambda xyz: _fps_structure(xyz, "first_point"),
    "first_found_padding": lambda xyz: _ball_structure(xyz, "first_found"),
}
GEOMETRY_SUITE = ("centroid_fps", "group_ball_knn", "group_knn", "knn_graph")
GEOMETRY_MUTATIONS = ("first_point_fps", "first_found_padding")


def certify_permutation_invariance(subject, trials: int = 100, tol: Optional[float] = None, seed: int = 0,
                                   identity: bool = False) -> CertReport:
    """Reorder input points at random and compare.

    Geometry ops (named in ``GEOMETRY_SUBJECTS``) must return exactly the same
    coordinate structure (multisets of coordinates; error 0 or 1). Networks
    compare outputs with the relative metric, default tolerance 1e-6.
    """
    if isinstance(subject, Network):
        net = subject
        tol = PERMUTATION_TOL if tol is None else tol

        def trial(rng):
            x = _random_cloud(rng, net.spec.n_points)
            perm = np.arange(len(x)) if identity else rng.permutation(len(x))
            a, b = net.forward(x[perm]).value, net.forward(x).value
            err = quaternion_error(a, b) if net.is_autoencoder else real_error(a, b)
            return err, digest(x, perm)

        name = net.spec.name
    else:
        if subject not in GEOMETRY_SUBJECTS:
            raise InvalidArgumentError("subject", subject, f"expected a Network or one of {sorted(GEOMETRY_SUBJECTS)}")
        op = GEOMETRY_SUBJECTS[subject]
        tol = 0.0 if tol is None else tol

        def trial(rng):
            x = rng.standard_normal((int(rng.integers(16, 33)), 3))
            perm = np.arange(len(x)) if identity else rng.permutation(len(x))
            return (0.0 if op(x[perm]) == op(x) else 1.0), digest(x, perm)

        name = subject
    return run_trials(name, "permutation_invariance", trials, tol, seed, trial)


# -- gradients -----------------------------------------------------------------


def _rel(ga: float, gn: float) -> float:
    return abs(ga - gn) / (abs(ga) + abs(gn) + 1e-12)


def _labels_for(net: Network, rng, batch: int):
    return None if net.is_autoencoder else rng.integers(0, net.stages[-1].channels, batch)


def gradcheck(net: Network, h: float = 1e-4, tol: float = GRADIENT_TOL, seed: int = 0, trials: int = 1,
              batch: int = 4, params: Optional[list[str]] = None) -> CertReport:
    """Central differences against the recorded backward pass, per parameter element.

    The relative error is ``|g_a - g_n| / (|g_a| + |g_n| + 1e-12)``. When an
    element fails at ``h`` but passes at ``h / 16``, the step straddled a
    non-smooth point (a ReLU hinge, a norm gate, an argmax switch); the input
    counts as a tie and is redrawn. So does an element whose mismatch is within
    a few units in the last place of the loss divided by ``h``, the resolution
    limit of the difference quotient itself.
    """
    names = list(net.params) if params is None else params
    work = net.clone()

    def loss_at(x, labels) -> float:
        saved = {k: v.copy() for k, v in work.buffers.items()}
        loss, _ = batch_loss(work, x, labels, True, np.random.default_rng(0))
        work._recorded = False
        for k, v in saved.items():
            work.buffers[k][...] = v
        return float(loss.value)

    def trial(rng):
        x = np.stack([_random_cloud(rng, net.spec.n_points) for _ in range(batch)])
        labels = _labels_for(net, rng, batch)
        saved = {k: v.copy() for k, v in work.buffers.items()}
        loss, _ = batch_loss(work, x, labels, True, np.random.default_rng(0))
        grads = work.backward(loss)
        for k, v in saved.items():
            work.buffers[k][...] = v
        worst = 0.0
        for name in names:
            p = work.params[name].value
            ga = grads[name]
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + h
                fp = loss_at(x, labels)
                p[i] = old - h
                fm = loss_at(x, labels)
                p[i] = old
                gn = (fp - fm) / (2 * h)
                err = _rel(ga[i], gn)
                if err > tol:
                    if abs(ga[i] - gn) <= ULP_SLACK * np.spacing(max(abs(fp), abs(fm))) / h:
                        raise Tie()
                    p[i] = old + h / 16
                    fp = loss_at(x, labels)
                    p[i] = old - h / 16
                    fm = loss_at(x, labels)
                    p[i] = old
                    if _rel(ga[i], (fp - fm) / (h / 8)) <= tol:
                        raise Tie()
                worst = max(worst, err)
        return worst, digest(x)

    return run_trials(net.spec.name, "gradient", trials, tol, seed, trial, parallel=False)


# -- suites ---------------------------------------------------------------------


def three_layer_spec(n_points: int = 16, seed: int = 0) -> NetworkSpec:
    """conv -> ReLU -> conv chain used to certify composition of layerwise equivariance."""
    return NetworkSpec(name="three-layer-chain", seed=seed, n_points=n_points,
                       layers=[QConv(out=6), QReLU(), QConv(out=4)])


def network_suite(net: Network, trials: int = 100, seed: int = 0, tol: Optional[float] = None) -> list[CertReport]:
    """All network-level certificates that apply to ``net``."""
    tol_eq = NETWORK_TOL if tol is None else tol
    out = [certify_network_equivariance(net, trials, tol_eq, seed)]
    if net.bridge_index is not None:
        out.append(certify_output_invariance(net, trials, tol_eq, seed))
    if net.spec.tap is not None:
        out.append(certify_decoder_equivariance(net, trials, tol_eq, seed))
    out.append(certify_permutation_invariance(net, trials, PERMUTATION_TOL if tol is None else tol, seed))
    return out
