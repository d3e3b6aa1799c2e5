import json

import numpy as np
import pytest
from pydantic import ValidationError

from reqnn import autodiff as ad
from reqnn.errors import InvalidArgumentError, ShapeMismatchError, SpecError, TapeError
from reqnn.geometry import PointCloud
from reqnn.network import (PRESETS, NetworkSpec, TrainConfig, build, chamfer_loss, count_complexity, derive_twin,
                           forward, preset_spec, spec_json_schema, train)
from reqnn.network.spec import Bridge, GlobalPool, Linear, QConv, QReLU, ToPoints
from reqnn.network.training import batch_loss
from reqnn.rotations import random_rotor, rotate_array, rotate_points


def cloud(rng, n=16):
    return rng.normal(size=(n, 3)) * [1.5, 1.0, 0.6]


def test_presets_build_deterministically():
    for name in PRESETS:
        a = build(preset_spec(name, seed=3))
        b = build(preset_spec(name, seed=3))
        assert a.param_count <= 50_000
        for k in a.params:
            assert np.array_equal(a.params[k].value, b.params[k].value)


def test_pointnet_cls_layer_layout():
    spec = preset_spec("micro-pointnet-cls")
    ops = [layer.op for layer in spec.layers]
    assert ops.count("qconv") == 3
    assert ops.count("linear") == 3
    assert ops.index("global_pool") < ops.index("bridge") < ops.index("linear")


def test_init_range():
    net = build(preset_spec("micro-pointnet-cls", seed=1))
    for name, p in net.params.items():
        if name.endswith("weight"):
            w = p.value
            assert np.all(np.abs(w) <= np.sqrt(1.0 / w.shape[1]))


def test_invalid_wiring_names_layer():
    with pytest.raises(SpecError, match="layer 3"):
        build(NetworkSpec(n_points=8, n_classes=2,
                          layers=[QConv(out=4), GlobalPool(), Bridge(), QConv(out=2)]))
    with pytest.raises(SpecError):
        build(NetworkSpec(n_points=8, layers=[QConv(out=4), Bridge(), Bridge()]))
    with pytest.raises(ValidationError):
        NetworkSpec(n_points=8, layers=[{"op": "qconv", "out": 0}])
    with pytest.raises(ValidationError):
        NetworkSpec(n_points=8, layers=[{"op": "nope"}])


def test_spec_json_roundtrip_and_schema():
    spec = preset_spec("micro-pointnetpp-cls")
    assert NetworkSpec.from_json(spec.to_json()) == spec
    schema = json.loads(spec_json_schema())
    assert "layers" in schema["properties"]


def test_forward_shape_mismatch(rng):
    net = build(preset_spec("micro-pointnet-cls", size="tiny"))
    with pytest.raises(ShapeMismatchError):
        net.forward(cloud(rng, 10))


@pytest.mark.parametrize("name", PRESETS)
def test_rotation_behaviour(name, rng):
    net = build(preset_spec(name, size="tiny", seed=2))
    for _ in range(5):
        x = cloud(rng)
        r = random_rotor(rng)
        feats = net.quaternion_features(x).value
        lhs = net.quaternion_features(rotate_points(r, x)).value
        assert np.max(np.abs(lhs - rotate_array(r, feats))) <= 1e-9 * (1 + np.max(np.abs(feats)))
        if not net.is_autoencoder:
            a, b = forward(net, rotate_points(r, x)), forward(net, x)
            assert np.max(np.abs(a - b)) <= 1e-9 * (1 + np.max(np.abs(b)))


def test_autoencoder_output_is_pure_cloud(rng):
    net = build(preset_spec("micro-pointnet-ae", size="tiny"))
    out = forward(net, cloud(rng))
    assert isinstance(out, PointCloud) and out.points.pure
    assert len(out) == net.spec.n_points


def test_forward_deterministic(rng):
    net = build(preset_spec("micro-edgeconv-cls", size="tiny"))
    x = cloud(rng)
    assert np.array_equal(forward(net, x), forward(net, x))


def test_twin_is_not_invariant(rng):
    twin = derive_twin(preset_spec("micro-pointnet-cls", size="tiny", seed=4))
    x = cloud(rng)
    a = forward(twin, rotate_points(random_rotor(rng), x))
    assert np.max(np.abs(a - forward(twin, x))) > 1e-6


def test_backward_contract(rng):
    net = build(preset_spec("micro-pointnet-cls", size="tiny"))
    x = np.stack([cloud(rng), cloud(rng)])
    with pytest.raises(TapeError):
        net.backward(ad.Var(0.0))
    loss, _ = batch_loss(net, x, np.array([0, 1]), True, rng)
    grads = net.backward(loss)
    assert set(grads) == set(net.params)
    with pytest.raises(TapeError):
        net.backward(loss)
    net.forward(x, training=True)
    zero = net.backward(ad.Var(0.0))
    assert all(not np.any(g) for g in zero.values())


def test_one_epoch_on_one_sample_descends(rng):
    net = build(preset_spec("micro-pointnet-cls", size="tiny", seed=1))
    x = cloud(rng)[None]
    y = np.array([2])
    before, _ = batch_loss(net, x, y, False, None)
    train(net, (x, y), TrainConfig(epochs=1, lr=1e-2, batch_size=1))
    after, _ = batch_loss(net, x, y, False, None)
    assert float(after.value) < float(before.value)


def test_training_deterministic(rng, tmp_path):
    x = np.stack([cloud(rng) for _ in range(6)])
    y = np.arange(6) % 3
    nets = [build(preset_spec("micro-pointnet-cls", size="tiny", seed=5)) for _ in range(2)]
    logs = [train(n, (x, y), TrainConfig(epochs=2, batch_size=4, seed=9), tmp_path / f"log{i}.jsonl")
            for i, n in enumerate(nets)]
    assert logs[0] == logs[1]
    for k in nets[0].params:
        assert np.array_equal(nets[0].params[k].value, nets[1].params[k].value)
    rec = json.loads((tmp_path / "log0.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"epoch", "loss", "acc"}


def test_train_rejects_empty():
    net = build(preset_spec("micro-pointnet-cls", size="tiny"))
    with pytest.raises(InvalidArgumentError):
        train(net, (np.zeros((0, 16, 3)), np.zeros(0, dtype=int)))


def test_chamfer_examples(rng):
    a = rng.normal(size=(5, 3))
    assert chamfer_loss(a, a)[0] == 0.0
    assert chamfer_loss([[0, 0, 0]], [[1, 0, 0]])[0] == 1.0
    with pytest.raises(InvalidArgumentError):
        chamfer_loss(np.zeros((0, 3)), a)
    p, t = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
    _, g = chamfer_loss(p, t)
    h = 1e-4
    for idx in np.ndindex(p.shape):
        hi, lo = p.copy(), p.copy()
        hi[idx] += h
        lo[idx] -= h
        num = (chamfer_loss(hi, t)[0] - chamfer_loss(lo, t)[0]) / (2 * h)
        assert abs(num - g[idx]) <= 1e-4 * max(1.0, abs(num))


def test_complexity_claims():
    for name in PRESETS:
        rep = count_complexity(build(preset_spec(name)))
        assert 0 < rep.param_count <= rep.twin_param_count
        assert rep.flop_count < 3 * rep.twin_flop_count
    empty = count_complexity(NetworkSpec(n_points=4, layers=[]))
    assert (empty.param_count, empty.flop_count) == (0, 0)


def test_complexity_hand_count():
    spec = NetworkSpec(n_points=10, n_classes=2,
                       layers=[QConv(out=4), QReLU(), GlobalPool(), Bridge(), Linear(out=2)])
    rep = count_complexity(spec)
    assert rep.param_count == 4 * 1 + 2 * 4 + 2
    assert rep.flop_count == 3 * 4 * 1 * 10 + 3 * 4 + 4 * 2
    # twin: three real coordinate channels, biases on the conv
    assert rep.twin_param_count == 4 * 3 + 4 + 2 * 4 + 2
    assert rep.twin_flop_count == 4 * 3 * 10 + 4 * 2


def test_shipped_schema_is_current():
    from pathlib import Path
    shipped = Path(__file__).resolve().parents[1] / "docs" / "network_spec.schema.json"
    assert json.loads(shipped.read_text()) == json.loads(spec_json_schema())
