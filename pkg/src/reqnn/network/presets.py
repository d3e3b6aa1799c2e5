"""Micro-scale presets built from the revised op catalogue.

Each preset comes in a ``default`` size (used for experiments, all below
50k parameters) and a ``tiny`` size (below 500 parameters, for full
finite-difference gradient checks).
"""

from __future__ import annotations

from ..errors import InvalidArgumentError
from .spec import (Bridge, Center, Dropout, EdgeFeatures, GlobalContext, GlobalPool, GroupPool, Linear, NetworkSpec,
                   QBatchNorm, QConv, QDropout, QReLU, ReLU, SampleGroup, ToPoints)

CLASSIFIERS = ("micro-pointnet-cls", "micro-pointnetpp-cls", "micro-edgeconv-cls")
PRESETS = CLASSIFIERS + ("micro-pointnet-ae",)


def _head(hidden: tuple[int, int], n_classes: int, dropout: float) -> list:
    layers = [Bridge(), Linear(out=hidden[0]), ReLU()]
    if dropout:
        layers.append(Dropout(p=dropout))
    layers += [Linear(out=hidden[1]), ReLU(), Linear(out=n_classes)]
    return layers


def micro_pointnet_cls(n_points=64, n_classes=3, widths=(16, 32, 64), head=(32, 16), dropout=0.0,
                       batchnorm=False, relu_c=1.0, seed=0) -> NetworkSpec:
    layers: list = [Center()]
    for i, w in enumerate(widths):
        layers.append(QConv(out=w))
        if i < len(widths) - 1:
            if batchnorm:
                layers.append(QBatchNorm())
            layers.append(QReLU(c=relu_c))
    layers.append(GlobalPool())
    layers += _head(head, n_classes, dropout)
    return NetworkSpec(name="micro-pointnet-cls", preset="micro-pointnet-cls", seed=seed, n_points=n_points,
                       n_classes=n_classes, layers=layers)


def micro_pointnetpp_cls(n_points=64, n_classes=3, levels=((16, 8, 0.5, (16, 32)), (4, 8, 1.0, (64,))),
                         head=(32, 16), dropout=0.0, seed=0) -> NetworkSpec:
    layers: list = [Center()]
    for m, k, radius, widths in levels:
        layers.append(SampleGroup(m=m, k=k, radius=radius))
        for j, w in enumerate(widths):
            layers.append(QConv(out=w))
            layers.append(QReLU())
        layers.append(GroupPool())
    layers.append(GlobalPool())
    layers += _head(head, n_classes, dropout)
    return NetworkSpec(name="micro-pointnetpp-cls", preset="micro-pointnetpp-cls", seed=seed, n_points=n_points,
                       n_classes=n_classes, layers=layers)


def micro_edgeconv_cls(n_points=64, n_classes=3, k=8, widths=(16, 32), final=64, head=(32, 16), dropout=0.0,
                       seed=0) -> NetworkSpec:
    layers: list = [Center()]
    for i, w in enumerate(widths):
        layers.append(EdgeFeatures(k=k, space="coords" if i == 0 else "features"))
        layers += [QConv(out=w), QReLU(), GroupPool()]
    layers += [QConv(out=final), GlobalPool()]
    layers += _head(head, n_classes, dropout)
    return NetworkSpec(name="micro-edgeconv-cls", preset="micro-edgeconv-cls", seed=seed, n_points=n_points,
                       n_classes=n_classes, layers=layers)


def micro_pointnet_ae(n_points=128, out_points=None, widths=(16, 32, 64, 64), context_after=1, decoder=128,
                      dropout=0.0, batchnorm=True, relu_c=1.0, seed=0) -> NetworkSpec:
    """Fully quaternion autoencoder; the global pooled feature is the bottleneck.

    After encoder block ``context_after`` every point also receives the pooled
    feature of the whole cloud, which keeps the bottleneck from collapsing to
    a single direction. No batch-norm follows the first convolution: with one
    coordinate channel it would reduce every point to its direction.
    """
    out_points = out_points or n_points
    layers: list = []
    for i, w in enumerate(widths):
        layers.append(QConv(out=w))
        if i < len(widths) - 1:
            if batchnorm and i > 0:
                layers.append(QBatchNorm())
            layers.append(QReLU(c=relu_c))
        if i == context_after and i < len(widths) - 1:
            layers.append(GlobalContext())
    layers.append(GlobalPool())
    tap = len(layers) - 1
    layers.append(QConv(out=decoder))
    if batchnorm:
        layers.append(QBatchNorm())
    layers.append(QReLU(c=relu_c))
    if dropout:
        layers.append(QDropout(p=dropout))
    layers += [QConv(out=out_points), ToPoints()]
    return NetworkSpec(name="micro-pointnet-ae", preset="micro-pointnet-ae", seed=seed, n_points=n_points,
                       tap=tap, layers=layers)


_TINY = {
    "micro-pointnet-cls": dict(n_points=16, widths=(4, 8, 8), head=(8, 6)),
    "micro-pointnetpp-cls": dict(n_points=16, levels=((6, 4, 0.6, (4, 6)), (3, 3, 1.2, (8,))), head=(8, 6)),
    "micro-edgeconv-cls": dict(n_points=16, k=4, widths=(4, 8), final=8, head=(8, 6)),
    "micro-pointnet-ae": dict(n_points=16, widths=(4, 6, 8), decoder=10),
}

_BUILDERS = {
    "micro-pointnet-cls": micro_pointnet_cls,
    "micro-pointnetpp-cls": micro_pointnetpp_cls,
    "micro-edgeconv-cls": micro_edgeconv_cls,
    "micro-pointnet-ae": micro_pointnet_ae,
}


def preset_spec(name: str, size: str = "default", **overrides) -> NetworkSpec:
    if name not in _BUILDERS:
        raise InvalidArgumentError("preset", name, f"expected one of {PRESETS}")
    if size not in ("default", "tiny"):
        raise InvalidArgumentError("size", size, "expected 'default' or 'tiny'")
    kwargs = dict(_TINY[name]) if size == "tiny" else {}
    kwargs.update(overrides)
    return _BUILDERS[name](**kwargs)
