"""Command-line entry point.

Exit codes: 0 success, 1 a certificate or experiment check failed, 2 usage
error (bad flags or unreadable input).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import certifier as cert
from . import checkpoint
from . import geometry as geo
from . import layers as L
from .data import DatasetSpec, load_cloud, save_cloud, synth_dataset
from .errors import ReqnnError
from .network import (PRESETS, Network, NetworkSpec, TrainConfig, accuracy, build, chamfer_loss, count_complexity,
                      output_points, preset_spec, reconstruction_error, train)
from .rotations import random_rotor, rotate_array, rotate_points, rotor_from_axis_angle

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# default axis/angle pairs for the reconstruction demo
DEMO_ROTATIONS = (
    ((0.46, 0.68, 0.56), "pi/3"),
    ((-0.44, -0.61, 0.66), "pi/4"),
    ((0.34, 0.94, 0.00), "pi/6"),
    ((0.16, 0.83, 0.53), "2pi/3"),
)

log = logging.getLogger("reqnn")


class UsageError(Exception):
    pass


def parse_angle(text: str) -> float:
    """Radians from ``1.2``, ``pi``, ``pi/3``, ``2pi/3``, ``2*pi/3`` or ``-pi/4``."""
    s = text.strip().replace(" ", "")
    m = re.fullmatch(r"([+-]?)(\d*\.?\d*)\*?pi(?:/(\d*\.?\d+))?", s)
    if m:
        sign, coef, den = m.groups()
        value = (float(coef) if coef else 1.0) * math.pi / (float(den) if den else 1.0)
        return -value if sign == "-" else value
    try:
        return float(s)
    except ValueError:
        raise UsageError(f"cannot parse angle {text!r}") from None


def parse_axis(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"cannot parse axis {text!r}") from None
    if len(parts) != 3:
        raise UsageError(f"axis needs three comma-separated components, got {text!r}")
    return parts


# -- shared plumbing -------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=None, help="override the property's default tolerance")
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--spec", type=Path, default=None, help="network spec JSON (instead of --preset)")
    p.add_argument("--size", choices=("default", "tiny"), default="default")
    p.add_argument("--out", type=Path, default=Path("reqnn-out"))
    p.add_argument("--fps-emit-centroid", action="store_true",
                   help="report the virtual centroid as the first sampled center")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--points", type=int, default=None, help="points per cloud (defaults to the spec's size)")
    p.add_argument("--n-train", type=int, default=300)
    p.add_argument("--n-test", type=int, default=150)
    p.add_argument("--classes", default="sphere,cube,planes")
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False,
                   help="scale every cloud into the unit sphere")
    p.add_argument("--data-dir", type=Path, default=None, help="class-per-subdirectory cloud files")


def _spec_from(args) -> NetworkSpec:
    if args.spec is not None and args.preset is not None:
        raise UsageError("pass either --preset or --spec, not both")
    if args.spec is not None:
        try:
            spec = NetworkSpec.load(args.spec)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read spec {args.spec}: {exc}") from None
    elif args.preset is not None:
        kw = {"seed": args.seed}
        if getattr(args, "points", None):
            kw["n_points"] = args.points
        spec = preset_spec(args.preset, size=args.size, **kw)
    else:
        raise UsageError("one of --preset or --spec is required")
    if args.fps_emit_centroid:
        spec = spec.model_copy(update={"layers": [
            layer.model_copy(update={"emit_centroid": True}) if layer.op == "sample_group" else layer
            for layer in spec.layers]})
    return spec


def _dataset(args, spec: NetworkSpec):
    ds = DatasetSpec(
        kind="file-dir" if args.data_dir else "synthetic-shapes",
        root=str(args.data_dir) if args.data_dir else None,
        classes=[c for c in args.classes.split(",") if c] if args.classes else [],
        points=spec.n_points, n_train=args.n_train, n_test=args.n_test, seed=args.seed,
        normalize=args.normalize,
    )
    return synth_dataset(ds)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _net(args) -> Network:
    net = build(_spec_from(args))
    ckpt = getattr(args, "checkpoint", None)
    if ckpt is not None:
        checkpoint.load(net, ckpt)
    return net


# -- subcommands -----------------------------------------------------------------


def cmd_certify(args) -> int:
    reports: list[cert.CertReport] = []
    if args.layer:
        names = cert.LAYER_SUITE if args.layer == ["all"] else args.layer
        for name in names:
            if name not in cert.LAYER_SUBJECTS:
                raise UsageError(f"unknown layer subject {name!r}; known: {sorted(cert.LAYER_SUBJECTS)}")
            tol = cert.LAYER_TOL if args.tol is None else args.tol
            reports.append(cert.certify_layer_equivariance(name, args.trials, tol, args.seed))
    if args.geometry:
        names = cert.GEOMETRY_SUITE if args.geometry == ["all"] else args.geometry
        for name in names:
            if name not in cert.GEOMETRY_SUBJECTS:
                raise UsageError(f"unknown geometry subject {name!r}; known: {sorted(cert.GEOMETRY_SUBJECTS)}")
            reports.append(cert.certify_permutation_invariance(name, args.trials, args.tol, args.seed))
    if args.preset is not None or args.spec is not None:
        net = _net(args)
        reports += cert.network_suite(net, args.trials, args.seed, args.tol)
        if args.gradcheck or net.param_count <= 500:
            reports.append(cert.gradcheck(net, tol=cert.GRADIENT_TOL if args.tol is None else args.tol,
                                          seed=args.seed))
    if not reports:
        raise UsageError("nothing to certify: pass --preset/--spec, --layer or --geometry")
    out = args.out / "cert_report.json"
    _write_json(out, [r.model_dump() for r in reports])
    for r in reports:
        print(f"{r.verdict.upper():4} {r.subject:24} {r.property:22} max_rel_err={r.max_relative_error:.3e} "
              f"tol={r.tolerance:.0e} ties={r.ties_resampled}")
    print(f"report: {out}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_train(args) -> int:
    net = build(_spec_from(args))
    data = _dataset(args, net.spec)
    args.out.mkdir(parents=True, exist_ok=True)
    log_path = args.out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, momentum=args.momentum, batch_size=args.batch_size,
                      seed=args.seed)
    records = train(net, data, cfg, log_path=log_path)
    checkpoint.save(net, args.out / "checkpoint.rqnn")
    net.spec.save(args.out / "spec.json")
    summary = {"epochs": len(records), "final_loss": records[-1]["loss"], "dataset_digest": data.digest()}
    if net.is_autoencoder:
        summary["test_chamfer"] = reconstruction_error(net, data.test_xyz)
    else:
        summary["rotated_test_accuracy"] = accuracy(net, data.rotated_xyz, data.rotated_labels)
    _write_json(args.out / "train_summary.json", summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    net = _net(args)
    data = _dataset(args, net.spec)
    if net.is_autoencoder:
        result = {"test_chamfer": reconstruction_error(net, data.test_xyz),
                  "rotated_test_chamfer": reconstruction_error(net, data.rotated_xyz)}
        ok = args.max_chamfer is None or result["rotated_test_chamfer"] <= args.max_chamfer
    else:
        result = {"test_accuracy": accuracy(net, data.test_xyz, data.test_labels),
                  "rotated_test_accuracy": accuracy(net, data.rotated_xyz, data.rotated_labels)}
        ok = args.min_accuracy is None or result["rotated_test_accuracy"] >= args.min_accuracy
    _write_json(args.out / "eval.json", result)
    print(json.dumps(result, indent=2))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_reconstruct(args) -> int:
    net = _net(args)
    if not net.is_autoencoder:
        raise UsageError("reconstruct needs an autoencoder preset or spec")
    if args.input is not None:
        try:
            xyz = load_cloud(args.input, normalize=True).xyz
        except (OSError, ReqnnError) as exc:
            raise UsageError(str(exc)) from None
    else:
        xyz = synth_dataset(DatasetSpec(classes=[args.shape], points=net.spec.n_points, n_train=1, n_test=1,
                                        seed=args.seed, normalize=True)).train_xyz[0]
    if args.axis or args.angle:
        if len(args.axis) != len(args.angle):
            raise UsageError("give one --angle per --axis")
        pairs = list(zip(args.axis, args.angle))
    else:
        pairs = [(",".join(map(str, a)), t) for a, t in DEMO_ROTATIONS]
    tol = 1e-9 if args.tol is None else args.tol
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    z = net.encode(xyz).value
    recon = net.decode(z).value
    save_cloud(xyz, out / "original.xyz")
    save_cloud(output_points(recon)[0], out / "reconstruction.xyz")
    rows = []
    for k, (axis_text, angle_text) in enumerate(pairs):
        axis, angle = parse_axis(axis_text), parse_angle(angle_text)
        r = rotor_from_axis_angle(axis, angle)
        direct = output_points(rotate_array(r, recon))[0]
        synth = output_points(net.decode(rotate_array(r, z)).value)[0]
        save_cloud(rotate_points(r, xyz), out / f"rotated_input_{k}.xyz")
        save_cloud(direct, out / f"direct_{k}.xyz")
        save_cloud(synth, out / f"synthesized_{k}.xyz")
        err, _ = chamfer_loss(synth, direct)
        rows.append({"axis": list(axis), "angle": angle, "chamfer_synth_vs_direct": err, "pass": err <= tol})
    result = {"reconstruction_chamfer": chamfer_loss(output_points(recon)[0], xyz)[0], "tolerance": tol,
              "rotations": rows}
    _write_json(out / "reconstruct.json", result)
    print(json.dumps(result, indent=2))
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL


def cmd_complexity(args) -> int:
    spec = _spec_from(args)
    report = count_complexity(spec, args.points)
    payload = report.to_dict()
    payload["params_not_above_twin"] = report.param_count <= report.twin_param_count
    payload["flops_below_3x_twin"] = report.flop_count < 3 * report.twin_flop_count or report.twin_flop_count == 0
    _write_json(args.out / "complexity.json", payload)
    print(json.dumps(payload, indent=2))
    return EXIT_OK if payload["params_not_above_twin"] and payload["flops_below_3x_twin"] else EXIT_FAIL


def _timeit(fn, repeat: int) -> float:
    best = math.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    n, c = 256, 32
    f = rng.standard_normal((4, c, n))
    w = rng.standard_normal((c, c))
    xyz = rng.standard_normal((n, 3))
    r = random_rotor(rng)
    ops = {
        "rotate_array": lambda: rotate_array(r, f),
        "qconv": lambda: L.qconv(w, f),
        "qrelu": lambda: L.qrelu(f),
        "qbatchnorm": lambda: L.qbatchnorm_var(f[:, :, None, :], 1e-5, (2, 3)),
        "qmaxpool_elementwise": lambda: L.qmaxpool_elementwise(f),
        "centroid_fps": lambda: geo.centroid_fps(xyz, 32),
        "group_ball_knn": lambda: geo.group_ball_knn(xyz, geo.centroid_fps(xyz, 32), 0.5, 16),
        "knn_graph": lambda: geo.knn_graph(xyz, 16),
        "density_estimate": lambda: geo.density_estimate(xyz),
        "pca_lrf": lambda: geo.pca_lrf(xyz * np.array([3.0, 2.0, 1.0])),
    }
    if args.preset is not None or args.spec is not None:
        net = _net(args)
        batch = rng.standard_normal((8, net.spec.n_points, 3))
        ops[f"{net.spec.name}.forward"] = lambda: net.forward(batch)
    repeat = max(1, min(args.trials, 20))
    timings = {name: _timeit(fn, repeat) for name, fn in ops.items()}
    _write_json(args.out / "bench.json", {"seconds": timings, "repeat": repeat})
    for name, t in timings.items():
        print(f"{name:32} {t * 1e3:9.3f} ms")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reqnn", description="Rotation-equivariant quaternion point-cloud networks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="run equivariance / invariance / gradient certificates")
    _common(p)
    p.add_argument("--layer", nargs="+", default=None, help="layer subjects, or 'all'")
    p.add_argument("--geometry", nargs="+", default=None, help="geometry subjects, or 'all'")
    p.add_argument("--gradcheck", action="store_true", help="finite-difference check even above 500 params")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("train", help="train a preset on a dataset and save the log plus a checkpoint")
    _common(p)
    _data_flags(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy (or Chamfer) on the rotated test set")
    _common(p)
    _data_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--min-accuracy", type=float, default=None, help="exit 1 below this rotated-test accuracy")
    p.add_argument("--max-chamfer", type=float, default=None, help="exit 1 above this rotated-test Chamfer")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="feature-rotation synthesis with an autoencoder")
    _common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--input", type=Path, default=None, help="cloud file (default: a synthetic shape)")
    p.add_argument("--shape", default="cube", help="synthetic shape when no --input is given")
    p.add_argument("--axis", action="append", default=[], help="rotation axis x,y,z (repeatable)")
    p.add_argument("--angle", action="append", default=[], help="rotation angle, e.g. pi/3 (repeatable)")
    p.set_defaults(func=cmd_reconstruct, preset_default="micro-pointnet-ae")

    p = sub.add_parser("complexity", help="parameter and multiply-add counts against the twin")
    _common(p)
    p.add_argument("--points", type=int, default=None)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("bench", help="wall time per operation")
    _common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "preset_default", None) and args.preset is None and args.spec is None:
        args.preset = args.preset_default
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"reqnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ReqnnError, ValidationError) as exc:
        print(f"reqnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
