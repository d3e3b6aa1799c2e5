"""Declarative network description (serialized as JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from ..errors import SpecError


class _Layer(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Center(_Layer):
    """Subtract the per-cloud centroid from the input coordinates (input layer only)."""

    op: Literal["center"] = "center"


class QConv(_Layer):
    op: Literal["qconv"] = "qconv"
    out: int = Field(gt=0)
    mutation: Optional[Literal["bias"]] = None


class QReLU(_Layer):
    op: Literal["qrelu"] = "qrelu"
    c: float = Field(1.0, gt=0)
    mode: Literal["constant", "batch_mean"] = "constant"
    mutation: Optional[Literal["componentwise", "stop_gradient"]] = None


class QBatchNorm(_Layer):
    op: Literal["qbatchnorm"] = "qbatchnorm"
    eps: float = Field(1e-5, gt=0)
    momentum: float = Field(0.1, gt=0, le=1)
    scale: bool = False


class QDropout(_Layer):
    op: Literal["qdropout"] = "qdropout"
    p: float = Field(0.0, ge=0, lt=1)


class SampleGroup(_Layer):
    """Centroid-seeded FPS picks ``m`` centers; each gets ``k`` neighbors.

    Neighbor features are concatenated with their coordinates relative to the
    center. ``radius=None`` switches to plain k-NN grouping.
    """

    op: Literal["sample_group"] = "sample_group"
    m: int = Field(gt=0)
    k: int = Field(gt=0)
    radius: Optional[float] = Field(None, gt=0)
    emit_centroid: bool = False
    mutation: Optional[Literal["first_point_fps", "first_found_padding"]] = None


class EdgeFeatures(_Layer):
    """k-NN graph, then edge features ``(f_j - f_i, f_i)`` per neighbor."""

    op: Literal["edge_features"] = "edge_features"
    k: int = Field(gt=0)
    space: Literal["coords", "features"] = "features"


class GroupPool(_Layer):
    """Norm-argmax pooling over the neighbor axis."""

    op: Literal["group_pool"] = "group_pool"


class GlobalPool(_Layer):
    """Norm-argmax pooling over all points."""

    op: Literal["global_pool"] = "global_pool"


class GlobalContext(_Layer):
    """Append the pooled (norm-argmax) feature of every channel to each point."""

    op: Literal["global_context"] = "global_context"


class Bridge(_Layer):
    op: Literal["bridge"] = "bridge"
    mutation: Optional[Literal["component_sum"]] = None


class Linear(_Layer):
    op: Literal["linear"] = "linear"
    out: int = Field(gt=0)


class ReLU(_Layer):
    op: Literal["relu"] = "relu"


class Dropout(_Layer):
    op: Literal["dropout"] = "dropout"
    p: float = Field(0.0, ge=0, lt=1)


class ToPoints(_Layer):
    """Read the channels of a pooled quaternion feature as output points."""

    op: Literal["to_points"] = "to_points"


LayerSpec = Annotated[
    Union[Center, QConv, QReLU, QBatchNorm, QDropout, SampleGroup, EdgeFeatures, GroupPool,
          GlobalPool, GlobalContext, Bridge, Linear, ReLU, Dropout, ToPoints],
    Field(discriminator="op"),
]

QUATERNION_OPS = {"qconv", "qrelu", "qbatchnorm", "qdropout", "sample_group", "edge_features",
                  "group_pool", "global_pool", "global_context", "to_points"}
REAL_OPS = {"linear", "relu", "dropout"}


class NetworkSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    preset: Optional[str] = None
    seed: int = 0
    n_points: int = Field(gt=0)
    n_classes: Optional[int] = Field(None, gt=1)
    tap: Optional[int] = Field(None, description="index of the layer whose output is the bottleneck feature")
    layers: list[LayerSpec]

    def to_json(self, **kw) -> str:
        return self.model_dump_json(indent=2, **kw)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.model_validate_json(text)

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def spec_json_schema() -> str:
    return json.dumps(NetworkSpec.model_json_schema(), indent=2)


@dataclass(frozen=True)
class Stage:
    """Feature layout flowing out of a layer.

    ``kind`` is one of ``points`` (Q, C, B, N), ``groups`` (Q, C, B, S, K),
    ``global`` (Q, C, B) or ``real`` (C, B).
    """

    kind: str
    channels: int
    n: int = 0
    k: int = 0


def infer_stages(spec: NetworkSpec, twin: bool = False) -> list[Stage]:
    """Validate wiring and return the layout after every layer.

    The first entry is the input layout. ``twin`` describes the derived
    non-equivariant network, where each coordinate quaternion becomes three
    real channels.
    """
    coord_ch = 3 if twin else 1
    stage = Stage("points", coord_ch, spec.n_points)
    stages = [stage]
    bridges = 0
    layers = spec.layers
    for i, layer in enumerate(layers):
        op = layer.op
        kind = stage.kind

        def fail(msg: str):
            raise SpecError(i, f"{op}: {msg}")

        if op in QUATERNION_OPS and kind == "real":
            fail("quaternion layer after the Quaternion2Real bridge")
        if op in REAL_OPS and kind != "real":
            fail("real-valued layer before the Quaternion2Real bridge")
        if op == "center":
            if i != 0:
                fail("must be the first layer")
        elif op == "qconv":
            out = layer.out
            if twin and i + 1 < len(layers) and layers[i + 1].op == "to_points":
                out *= 3
            stage = Stage(kind, out, stage.n, stage.k)
        elif op in ("qrelu", "qbatchnorm", "qdropout", "relu", "dropout"):
            pass
        elif op == "sample_group":
            if kind != "points":
                fail(f"expects per-point features, got {kind}")
            if layer.m > stage.n:
                fail(f"m={layer.m} exceeds {stage.n} points")
            if layer.k > stage.n:
                fail(f"k={layer.k} exceeds {stage.n} points")
            stage = Stage("groups", stage.channels + coord_ch, layer.m, layer.k)
        elif op == "edge_features":
            if kind != "points":
                fail(f"expects per-point features, got {kind}")
            if layer.k >= stage.n:
                fail(f"k={layer.k} must be below {stage.n} points")
            stage = Stage("groups", 2 * stage.channels, stage.n, layer.k)
        elif op == "group_pool":
            if kind != "groups":
                fail(f"expects grouped features, got {kind}")
            stage = Stage("points", stage.channels, stage.n)
        elif op == "global_pool":
            if kind != "points":
                fail(f"expects per-point features, got {kind}")
            stage = Stage("global", stage.channels)
        elif op == "global_context":
            if kind != "points":
                fail(f"expects per-point features, got {kind}")
            stage = Stage("points", 2 * stage.channels, stage.n)
        elif op == "bridge":
            bridges += 1
            if bridges > 1:
                fail("at most one Quaternion2Real bridge")
            if kind != "global":
                fail("bridge must follow global pooling")
            stage = Stage("real", stage.channels)
        elif op == "linear":
            stage = Stage("real", layer.out)
        elif op == "to_points":
            if kind != "global":
                fail("to_points must follow a pooled feature")
            if i != len(layers) - 1:
                fail("to_points must be the last layer")
            stage = Stage("cloud", layer_out_points(stage.channels, twin))
        stages.append(stage)
    if spec.tap is not None:
        if not 0 <= spec.tap < len(layers):
            raise SpecError(None, f"tap={spec.tap} is not a layer index")
        if stages[spec.tap + 1].kind != "global":
            raise SpecError(spec.tap, "the tapped bottleneck must be a pooled quaternion feature")
    if spec.n_classes is not None and stage.kind == "real" and stage.channels != spec.n_classes:
        raise SpecError(len(layers) - 1, f"head emits {stage.channels} logits, spec declares {spec.n_classes}")
    return stages


def layer_out_points(channels: int, twin: bool) -> int:
    return channels // 3 if twin else channels
