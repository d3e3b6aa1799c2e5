"""Parameter and multiply-add counts for a network and its non-equivariant twin.

Only weight multiply-adds are counted: a quaternion convolution costs three
(one per imaginary channel) per shared real weight and position, a real
convolution or dense layer one, and the Quaternion2Real bridge three per
element. Norm computations inside ReLU, batch-norm and pooling are not counted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .model import Network
from .spec import NetworkSpec, Stage, infer_stages


@dataclass(frozen=True)
class ComplexityReport:
    param_count: int
    flop_count: int
    twin_param_count: int
    twin_flop_count: int

    @property
    def flop_ratio(self) -> float:
        return self.flop_count / self.twin_flop_count if self.twin_flop_count else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flop_ratio"] = self.flop_ratio
        return d


def _positions(stage: Stage) -> int:
    if stage.kind == "points":
        return stage.n
    if stage.kind == "groups":
        return stage.n * stage.k
    return 1


def _flops(spec: NetworkSpec, twin: bool) -> int:
    stages = infer_stages(spec, twin)
    total = 0
    for i, layer in enumerate(spec.layers):
        before, after = stages[i], stages[i + 1]
        if layer.op == "qconv":
            per_weight = 1 if twin else 3
            total += per_weight * before.channels * after.channels * _positions(after)
        elif layer.op == "linear":
            total += before.channels * after.channels
        elif layer.op == "bridge" and not twin:
            total += 3 * before.channels
    return total


def count_complexity(net, n_points: int | None = None) -> ComplexityReport:
    """Counts for one input cloud of ``n_points`` (defaults to the spec's size)."""
    spec = net.spec if isinstance(net, Network) else net
    if n_points is not None and n_points != spec.n_points:
        spec = spec.model_copy(update={"n_points": n_points})
    if not spec.layers:
        return ComplexityReport(0, 0, 0, 0)
    reqnn = net if isinstance(net, Network) and not net.twin else Network(spec)
    twin = Network(spec, twin=True)
    return ComplexityReport(reqnn.param_count, _flops(spec, False), twin.param_count, _flops(spec, True))
