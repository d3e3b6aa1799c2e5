"""Network assembly and execution.

A ``Network`` instantiates a ``NetworkSpec`` either as the rotation-equivariant
quaternion network or, with ``twin=True``, as its automatically derived
non-equivariant counterpart: same topology, real features (a coordinate
quaternion becomes three real channels), biases restored, standard ReLU,
batch-norm and max-pooling, and no bridge.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import autodiff as ad
from .. import geometry as geo
from .. import layers as L
from ..autodiff import Var
from ..errors import InvalidArgumentError, ShapeMismatchError, SpecError, TapeError
from ..geometry import PointCloud
from ..q2r import component_sum, quaternion_to_real, real_linear
from ..quat import QTensor
from .spec import NetworkSpec, infer_stages


@dataclass
class _State:
    feat: Var
    coords: Optional[np.ndarray]  # (B, n, 3) positions of the current points


def as_batch(clouds) -> np.ndarray:
    """Coordinates of one cloud or a batch of equal-size clouds as (B, N, 3)."""
    if isinstance(clouds, PointCloud):
        return clouds.xyz[None]
    if isinstance(clouds, QTensor):
        return clouds.to_points().reshape(1, -1, 3)
    if isinstance(clouds, (list, tuple)) and clouds and isinstance(clouds[0], PointCloud):
        return np.stack([c.xyz for c in clouds])
    xyz = np.asarray(clouds, dtype=np.float64)
    if xyz.ndim == 2:
        xyz = xyz[None]
    if xyz.ndim != 3 or xyz.shape[-1] != 3:
        raise InvalidArgumentError("clouds", xyz.shape, "expected (B, N, 3) coordinates")
    return xyz


class Network:
    def __init__(self, spec: NetworkSpec, twin: bool = False):
        self.spec = spec
        self.twin = twin
        self.stages = infer_stages(spec, twin)
        self.params: dict[str, Var] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._recorded = False
        rng = np.random.default_rng(spec.seed)
        for i, layer in enumerate(spec.layers):
            self._init_layer(i, layer, rng)

    # -- construction -------------------------------------------------------

    def _param(self, name: str, shape, fan_in: int, rng) -> None:
        s = np.sqrt(1.0 / max(fan_in, 1))
        self.params[name] = Var(rng.uniform(-s, s, shape), requires_grad=True, name=name)

    def _init_layer(self, i: int, layer, rng) -> None:
        fan_in = self.stages[i].channels
        out = self.stages[i + 1].channels
        tag = f"{i}.{layer.op}"
        if layer.op == "qconv":
            self._param(f"{tag}.weight", (out, fan_in), fan_in, rng)
            if self.twin:
                self._param(f"{tag}.bias", (1, out), fan_in, rng)
            elif layer.mutation == "bias":
                self._param(f"{tag}.bias", (3, out), fan_in, rng)
        elif layer.op == "linear":
            self._param(f"{tag}.weight", (out, fan_in), fan_in, rng)
            self._param(f"{tag}.bias", (out,), fan_in, rng)
        elif layer.op == "qbatchnorm":
            if self.twin:
                self.params[f"{tag}.gamma"] = Var(np.ones(fan_in), requires_grad=True, name=f"{tag}.gamma")
                self.params[f"{tag}.beta"] = Var(np.zeros(fan_in), requires_grad=True, name=f"{tag}.beta")
                self.buffers[f"{tag}.running_mean"] = np.zeros(fan_in)
                self.buffers[f"{tag}.running_var"] = np.ones(fan_in)
            else:
                if layer.scale:
                    self.params[f"{tag}.log_scale"] = Var(np.zeros(fan_in), requires_grad=True,
                                                          name=f"{tag}.log_scale")
                self.buffers[f"{tag}.running_ms"] = np.ones(fan_in)

    @property
    def parameters(self) -> list[Var]:
        return list(self.params.values())

    @property
    def param_count(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    @property
    def bridge_index(self) -> Optional[int]:
        for i, layer in enumerate(self.spec.layers):
            if layer.op == "bridge":
                return i
        return None

    @property
    def is_autoencoder(self) -> bool:
        return self.stages[-1].kind == "cloud"

    def clone(self) -> "Network":
        return copy.deepcopy(self)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.value for name, p in self.params.items()}
        out.update(self.buffers)
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            if name in self.params:
                target = self.params[name].value
            elif name in self.buffers:
                target = self.buffers[name]
            else:
                raise InvalidArgumentError("checkpoint", name, "unknown parameter name")
            if target.shape != value.shape:
                raise ShapeMismatchError(target.shape, value.shape, f"shapes for {name}")
            target[...] = value

    # -- execution ----------------------------------------------------------

    def _lift_coords(self, xyz: np.ndarray) -> np.ndarray:
        """(..., 3) coordinates -> (Q, coord_channels, ...) feature array."""
        moved = np.moveaxis(xyz, -1, 0)
        if self.twin:
            return moved[None]
        out = np.zeros((4, 1) + xyz.shape[:-1])
        out[1:, 0] = moved
        return out

    def input_state(self, clouds) -> _State:
        xyz = as_batch(clouds)
        if xyz.shape[1] != self.spec.n_points:
            raise ShapeMismatchError((self.spec.n_points,), (xyz.shape[1],), "expected and given point counts")
        return _State(Var(self._lift_coords(xyz)), xyz.copy())

    def run(self, state: _State, start: int, stop: int, training: bool = False,
            rng: Optional[np.random.Generator] = None) -> _State:
        for i in range(start, stop):
            state = self._apply(i, self.spec.layers[i], state, training, rng)
        return state

    def forward(self, clouds, training: bool = False, rng: Optional[np.random.Generator] = None) -> Var:
        """Logits (C, B) for classifiers, output quaternions (4, P, B) for autoencoders.

        In training mode the pass is recorded for one subsequent ``backward``.
        """
        state = self.run(self.input_state(clouds), 0, len(self.spec.layers), training, rng)
        self._recorded = training
        return state.feat

    def quaternion_features(self, clouds) -> Var:
        """Output of the quaternion module (the bridge input), eval mode."""
        stop = self.bridge_index
        if stop is None:
            stop = len(self.spec.layers)
            if self.is_autoencoder:
                stop -= 1
        return self.run(self.input_state(clouds), 0, stop).feat

    def encode(self, clouds) -> Var:
        if self.spec.tap is None:
            raise SpecError(None, "no bottleneck tap declared")
        return self.run(self.input_state(clouds), 0, self.spec.tap + 1).feat

    def decode(self, z) -> Var:
        if self.spec.tap is None:
            raise SpecError(None, "no bottleneck tap declared")
        return self.run(_State(ad.as_var(z), None), self.spec.tap + 1, len(self.spec.layers)).feat

    def backward(self, loss) -> dict[str, np.ndarray]:
        if not self._recorded:
            raise TapeError("backward requires a preceding training-mode forward (tape is empty or consumed)")
        self._recorded = False
        grads = ad.backward(loss, self.parameters)
        return dict(zip(self.params.keys(), grads))

    def _apply(self, i: int, layer, state: _State, training: bool, rng) -> _State:
        op = layer.op
        x = state.feat
        tag = f"{i}.{op}"
        p = self.params
        if op == "center":
            coords = state.coords - state.coords.mean(axis=1, keepdims=True)
            return _State(Var(self._lift_coords(coords)), coords)
        if op == "qconv":
            w = p[f"{tag}.weight"]
            if self.twin:
                return _State(L.conv_with_bias(w, p[f"{tag}.bias"], x), state.coords)
            if layer.mutation == "bias":
                b4 = ad.concat([np.zeros((1, w.shape[0])), p[f"{tag}.bias"]], axis=0)
                return _State(L.conv_with_bias(w, b4, x), state.coords)
            return _State(L.qconv(w, x), state.coords)
        if op == "qrelu":
            if self.twin or layer.mutation == "componentwise":
                y = L.relu_componentwise(x)
            elif layer.mutation == "stop_gradient":
                y = L.qrelu_stop_gradient(x, layer.c)
            else:
                y = L.qrelu(x, layer.c, layer.mode)
            return _State(y, state.coords)
        if op == "qbatchnorm":
            reduce_axes = tuple(range(2, x.ndim))
            if self.twin:
                y = L.batchnorm_standard(x, layer.eps, reduce_axes, p[f"{tag}.gamma"], p[f"{tag}.beta"],
                                         self.buffers[f"{tag}.running_mean"], self.buffers[f"{tag}.running_var"],
                                         training, layer.momentum)
            else:
                scale = ad.exp(p[f"{tag}.log_scale"]) if layer.scale else None
                y = L.qbatchnorm_var(x, layer.eps, reduce_axes, self.buffers[f"{tag}.running_ms"],
                                     training, layer.momentum, scale)
            return _State(y, state.coords)
        if op in ("qdropout", "dropout"):
            if not training or layer.p == 0.0:
                return state
            if rng is None:
                raise InvalidArgumentError("rng", None, "training with dropout needs an RNG stream")
            mask_shape = x.shape[1:] if op == "qdropout" else x.shape
            mask = L.dropout_mask(mask_shape, layer.p, rng)
            return _State(x * (mask[None] if op == "qdropout" else mask), state.coords)
        if op == "sample_group":
            return self._sample_group(layer, state)
        if op == "edge_features":
            return self._edge_features(layer, state)
        if op in ("group_pool", "global_pool"):
            y = L.maxpool_standard(x, axis=-1) if self.twin else L.qmaxpool_elementwise(x, axis=-1)
            return _State(y, state.coords if op == "group_pool" else None)
        if op == "global_context":
            pooled = L.maxpool_standard(x, axis=-1) if self.twin else L.qmaxpool_elementwise(x, axis=-1)
            pooled = ad.broadcast_to(ad.reshape(pooled, pooled.shape + (1,)), x.shape)
            return _State(ad.concat([x, pooled], axis=1), state.coords)
        if op == "bridge":
            if self.twin:
                y = ad.reshape(x, x.shape[1:])
            elif layer.mutation == "component_sum":
                y = component_sum(x)
            else:
                y = quaternion_to_real(x)
            return _State(y, None)
        if op == "linear":
            return _State(real_linear(p[f"{tag}.weight"], p[f"{tag}.bias"], x), None)
        if op == "relu":
            return _State(ad.relu(x), None)
        if op == "to_points":
            return state
        raise SpecError(i, f"unknown op {op!r}")

    def _sample_group(self, layer, state: _State) -> _State:
        xyz = state.coords
        B = xyz.shape[0]
        seed = "first_point" if layer.mutation == "first_point_fps" else "centroid"
        padding = "first_found" if layer.mutation == "first_found_padding" else "nearest"
        idx = np.empty((B, layer.m, layer.k), dtype=np.int64)
        cxyz = np.empty((B, layer.m, 3))
        for b in range(B):
            centers = geo.centroid_fps(xyz[b], layer.m, seed=seed, emit_centroid=layer.emit_centroid)
            if layer.radius is None:
                groups = geo.group_knn(xyz[b], centers, layer.k)
            else:
                groups = geo.group_ball_knn(xyz[b], centers, layer.radius, layer.k, padding=padding)
            idx[b] = groups.groups
            cxyz[b] = geo.center_coords(xyz[b], centers)
        bidx = np.arange(B)[:, None, None]
        grouped = ad.gather(state.feat, (slice(None), slice(None), bidx, idx))
        rel = xyz[bidx, idx] - cxyz[:, :, None, :]
        feat = ad.concat([self._lift_coords(rel), grouped], axis=1)
        return _State(feat, cxyz)

    def _edge_features(self, layer, state: _State) -> _State:
        x = state.feat
        xyz = state.coords
        B, N = xyz.shape[:2]
        idx = np.empty((B, N, layer.k), dtype=np.int64)
        for b in range(B):
            if layer.space == "coords":
                keys = xyz[b]
            else:
                keys = x.value[:, :, b].reshape(-1, N).T
            idx[b] = geo.knn_indices(keys, keys, layer.k, xyz[b], exclude=np.arange(N))
        bidx = np.arange(B)[:, None, None]
        fj = ad.gather(x, (slice(None), slice(None), bidx, idx))
        fi = ad.reshape(x, x.shape + (1,))
        fi_b = ad.broadcast_to(fi, fj.shape)
        feat = ad.concat([fj - fi, fi_b], axis=1)
        return _State(feat, xyz)


def build(spec: NetworkSpec, twin: bool = False) -> Network:
    return Network(spec, twin=twin)


def derive_twin(net_or_spec) -> Network:
    """Non-equivariant counterpart with the same topology and seed."""
    spec = net_or_spec.spec if isinstance(net_or_spec, Network) else net_or_spec
    return Network(spec, twin=True)


def output_points(out) -> np.ndarray:
    """Decoder output (4, P, B) (or the twin's (1, 3P, B)) as (B, P, 3) coordinates."""
    v = ad.value_of(out)
    if v.shape[0] == 4:
        return np.transpose(v[1:], (2, 1, 0))
    P = v.shape[1] // 3
    return np.transpose(v[0].reshape(P, 3, -1), (2, 0, 1))


def forward(net: Network, cloud):
    """Run one cloud through the network in eval mode.

    Returns the logits (C,) for a classifier or a ``PointCloud`` for an
    autoencoder.
    """
    out = net.forward(cloud)
    if net.is_autoencoder:
        if net.twin:
            return PointCloud.from_xyz(output_points(out)[0])
        data = out.value[:, :, 0].copy()
        data[0] = 0.0
        return PointCloud(QTensor(data, pure=True))
    return out.value[:, 0].copy()


def forward_batches(net: Network, xyz: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode outputs for many clouds, concatenated along the batch axis."""
    outs = [net.forward(xyz[s:s + batch_size]).value for s in range(0, len(xyz), batch_size)]
    return np.concatenate(outs, axis=-1)


