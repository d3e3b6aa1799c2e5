"""Point-set stages: sampling, grouping, density, local frames, graphs.

Every selection here depends only on pairwise distances plus a data-only tie
break (lexicographically largest coordinate wins), so results are unchanged
by rotating the cloud and by reordering its points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import DegenerateFrameError, InvalidArgumentError, ShapeMismatchError
from .quat import QTensor

EIGEN_GAP = 1e-9
CENTROID = -1  # sentinel index for the virtual centroid when it is emitted


@dataclass(frozen=True)
class PointCloud:
    points: QTensor
    label: Optional[int] = None

    def __post_init__(self):
        if len(self.points.shape) != 1:
            raise InvalidArgumentError("points", self.points.shape, "expected a 1-D quaternion tensor")
        if not self.points.pure:
            raise InvalidArgumentError("points", "non-pure", "point clouds hold pure quaternions")

    @classmethod
    def from_xyz(cls, xyz, label: Optional[int] = None) -> "PointCloud":
        return cls(QTensor.from_points(np.asarray(xyz, dtype=np.float64).reshape(-1, 3)), label)

    @property
    def xyz(self) -> np.ndarray:
        return self.points.to_points()

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class IndexGroups:
    centers: np.ndarray
    groups: np.ndarray  # (len(centers), K)

    @property
    def k(self) -> int:
        return self.groups.shape[1]


@dataclass(frozen=True)
class LocalFrame:
    basis: np.ndarray  # rows are the axes, descending eigenvalue order
    origin: np.ndarray
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(3))


def as_coords(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        xyz = cloud.xyz
    elif isinstance(cloud, QTensor):
        xyz = cloud.to_points()
    else:
        xyz = np.asarray(cloud, dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[1] != 3:
        raise InvalidArgumentError("cloud", xyz.shape, "expected (n, 3) coordinates")
    if xyz.shape[0] == 0:
        raise InvalidArgumentError("cloud", xyz.shape, "cloud is empty")
    return xyz


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between rows of ``a`` (m, F) and ``b`` (n, F), by direct differences."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("mnf,mnf->mn", diff, diff)


def _lex_argmax(score: np.ndarray, coords: np.ndarray) -> int:
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], score))
    return int(order[-1])


def _nearest_order(d: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Row-wise candidate order: ascending distance, ties to the larger coordinate."""
    bshape = d.shape
    keys = (
        np.broadcast_to(-coords[:, 2], bshape),
        np.broadcast_to(-coords[:, 1], bshape),
        np.broadcast_to(-coords[:, 0], bshape),
        d,
    )
    return np.lexsort(keys, axis=-1)


def centroid_fps(cloud, m: int, seed: str = "centroid", emit_centroid: bool = False) -> np.ndarray:
    """Farthest point sampling seeded by the cloud's centroid.

    The centroid is a virtual seed: it decides the first pick and is then
    dropped from the distance set. With ``emit_centroid`` it is reported as the
    first selected "point" (index ``CENTROID``) followed by ``m - 1`` picks.
    ``seed="first_point"`` is the classical, order-dependent variant.
    """
    xyz = as_coords(cloud)
    n = xyz.shape[0]
    if not 1 <= m <= n:
        raise InvalidArgumentError("m", m, f"must lie in [1, {n}]")
    picks: list[int] = []
    budget = m - 1 if emit_centroid else m
    if budget == 0:
        return np.array([CENTROID], dtype=np.int64)
    if seed == "centroid":
        c = xyz.mean(axis=0)
        first = _lex_argmax(np.sum((xyz - c) ** 2, axis=1), xyz)
    elif seed == "first_point":
        first = 0
    else:
        raise InvalidArgumentError("seed", seed, "expected 'centroid' or 'first_point'")
    picks.append(first)
    mind = np.sum((xyz - xyz[first]) ** 2, axis=1)
    mind[first] = -np.inf
    while len(picks) < budget:
        nxt = _lex_argmax(mind, xyz)
        picks.append(nxt)
        mind = np.minimum(mind, np.sum((xyz - xyz[nxt]) ** 2, axis=1))
        mind[picks] = -np.inf
    out = np.array(picks, dtype=np.int64)
    if emit_centroid:
        out = np.concatenate([[CENTROID], out])
    return out


def center_coords(xyz: np.ndarray, centers: np.ndarray) -> np.ndarray:
    centers = np.asarray(centers, dtype=np.int64)
    out = xyz[np.where(centers == CENTROID, 0, centers)]
    if np.any(centers == CENTROID):
        out = out.copy()
        out[centers == CENTROID] = xyz.mean(axis=0)
    return out


def group_ball_knn(cloud, centers, radius: float, k: int, padding: str = "nearest") -> IndexGroups:
    """Ball-query grouping with k-NN selection when the ball is overfull.

    Underfull balls are padded by repeating the nearest in-ball point (or the
    nearest point overall if the ball is empty). ``padding="first_found"``
    reproduces the classical order-dependent rule (first K in index order,
    padded with the first found).
    """
    xyz = as_coords(cloud)
    if not radius > 0:
        raise InvalidArgumentError("radius", radius, "must be positive")
    if k < 1:
        raise InvalidArgumentError("k", k, "must be at least 1")
    if padding not in ("nearest", "first_found"):
        raise InvalidArgumentError("padding", padding, "expected 'nearest' or 'first_found'")
    centers = np.asarray(centers, dtype=np.int64)
    cxyz = center_coords(xyz, centers)
    d = sq_dists(cxyz, xyz)
    r2 = radius * radius
    groups = np.empty((len(centers), k), dtype=np.int64)
    order = _nearest_order(d, xyz)
    for s in range(len(centers)):
        if padding == "nearest":
            ranked = order[s]
            inside = ranked[d[s, ranked] <= r2]
            if len(inside) == 0:
                inside = ranked[:1]
        else:
            inside = np.flatnonzero(d[s] <= r2)
            if len(inside) == 0:
                inside = order[s, :1]
        chosen = inside[:k]
        if len(chosen) < k:
            chosen = np.concatenate([chosen, np.full(k - len(chosen), chosen[0])])
        groups[s] = chosen
    return IndexGroups(centers, groups)


def knn_indices(feats: np.ndarray, queries: np.ndarray, k: int, tiebreak: np.ndarray,
                exclude: np.ndarray | None = None) -> np.ndarray:
    """k nearest rows of ``feats`` for each query row, with coordinate tie-break.

    ``exclude`` optionally gives, per query, one index to skip (self edges).
    """
    d = sq_dists(queries, feats)
    if exclude is not None:
        d[np.arange(len(queries)), exclude] = np.inf
    order = _nearest_order(d, tiebreak)
    return order[:, :k]


def group_knn(cloud, centers, k: int) -> IndexGroups:
    xyz = as_coords(cloud)
    n = xyz.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError("k", k, f"must lie in [1, {n}]")
    centers = np.asarray(centers, dtype=np.int64)
    return IndexGroups(centers, knn_indices(xyz, center_coords(xyz, centers), k, xyz))


def knn_graph(cloud, k: int) -> np.ndarray:
    """Directed edges ``(u, v)`` for ``v`` among the ``k`` nearest other points of ``u``."""
    xyz = as_coords(cloud)
    n = xyz.shape[0]
    if not 1 <= k < n:
        raise InvalidArgumentError("k", k, f"must lie in [1, {n - 1}]")
    nbrs = knn_indices(xyz, xyz, k, xyz, exclude=np.arange(n))
    u = np.repeat(np.arange(n), k)
    return np.stack([u, nbrs.reshape(-1)], axis=1)


def default_bandwidth(cloud) -> float:
    """0.1 x the diameter of the centroid-centered bounding sphere.

    Unlike an axis-aligned box diagonal this does not change under rotation.
    """
    xyz = as_coords(cloud)
    r = np.sqrt(np.max(np.sum((xyz - xyz.mean(axis=0)) ** 2, axis=1)))
    return 0.2 * r if r > 0 else 1.0


def density_estimate(cloud, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density ``(1/n) sum_v exp(-|p_u - p_v|^2 / (2 h^2))``."""
    xyz = as_coords(cloud)
    if bandwidth is None:
        bandwidth = default_bandwidth(xyz)
    if not bandwidth > 0:
        raise InvalidArgumentError("bandwidth", bandwidth, "must be positive")
    d = sq_dists(xyz, xyz)
    return np.mean(np.exp(-d / (2.0 * bandwidth * bandwidth)), axis=1)


def density_weighting(cloud, features, bandwidth: float | None = None):
    """Scale each point's features by its inverse density (a real scalar)."""
    dens = density_estimate(cloud, bandwidth)
    return _scale_rows(features, 1.0 / dens)


def pca_lrf(points) -> tuple[LocalFrame, np.ndarray]:
    """PCA local reference frame and the points expressed in it.

    Axes follow descending eigenvalue order. Each of the first two axes is
    oriented towards the farthest point from the centroid (falling back to the
    next farthest when the dot product vanishes); the third is their cross
    product, so the frame is right-handed and co-rotates with the points.
    """
    xyz = as_coords(points)
    origin = xyz.mean(axis=0)
    centered = xyz - origin
    cov = centered.T @ centered / xyz.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    gap = float(min(evals[0] - evals[1], evals[1] - evals[2]))
    if gap < EIGEN_GAP:
        raise DegenerateFrameError(evals, gap)
    dist = np.sum(centered * centered, axis=1)
    ranked = np.lexsort((centered[:, 2], centered[:, 1], centered[:, 0], -dist))
    basis = np.empty((3, 3))
    for a in range(2):
        e = evecs[:, a]
        for idx in ranked:
            dot = float(centered[idx] @ e)
            if abs(dot) > 1e-9 * max(np.sqrt(dist[idx]), 1e-300):
                break
        basis[a] = e if dot >= 0 else -e
    basis[2] = np.cross(basis[0], basis[1])
    return LocalFrame(basis, origin, evals.copy()), centered @ basis.T


class WeightNet:
    """Tiny real MLP (3 -> hidden -> 1) turning local coordinates into weights."""

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = (ad.as_var(p) for p in (w1, b1, w2, b2))

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 8, requires_grad: bool = False) -> "WeightNet":
        s1, s2 = np.sqrt(1.0 / 3), np.sqrt(1.0 / hidden)
        parts = (
            rng.uniform(-s1, s1, (hidden, 3)),
            rng.uniform(-s1, s1, hidden),
            rng.uniform(-s2, s2, (1, hidden)),
            rng.uniform(-s2, s2, 1),
        )
        return cls(*(Var(p, requires_grad=requires_grad) for p in parts))

    @classmethod
    def constant(cls, value: float, hidden: int = 8) -> "WeightNet":
        return cls(np.zeros((hidden, 3)), np.zeros(hidden), np.zeros((1, hidden)), np.full(1, float(value)))

    @property
    def params(self) -> list[Var]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, coords) -> Var:
        """Weights of shape (K,) for local coordinates of shape (K, 3)."""
        x = ad.as_var(np.asarray(ad.value_of(coords)).T)
        h = ad.relu(ad.matmul(self.w1, x) + ad.reshape(self.b1, (-1, 1)))
        out = ad.matmul(self.w2, h) + ad.reshape(self.b2, (-1, 1))
        return ad.reshape(out, (-1,))


def _scale_rows(features, scale):
    """Multiply quaternion features (K, d) row-wise by real scalars (K,)."""
    if isinstance(features, QTensor):
        s = np.asarray(ad.value_of(scale))
        if s.shape != features.shape[:1]:
            raise ShapeMismatchError(features.shape[:1], s.shape, "feature rows and weights")
        return QTensor(features.data * s.reshape((1, -1) + (1,) * (len(features.shape) - 1)))
    x = ad.as_var(features)
    s = ad.as_var(scale)
    if s.shape != x.shape[1:2]:
        raise ShapeMismatchError(x.shape[1:2], s.shape, "feature rows and weights")
    return x * ad.reshape(s, (1, -1) + (1,) * (x.ndim - 2))


def coords_weighting(lrf_coords, weight_net: WeightNet, features):
    """Reweight each neighbor's quaternion features by ``weight_net(lrf_coords[k])``."""
    coords = np.asarray(ad.value_of(lrf_coords))
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ShapeMismatchError(coords.shape, ("K", 3), "local coordinates")
    return _scale_rows(features, weight_net(coords))
