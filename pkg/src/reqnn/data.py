"""Point-cloud files and synthetic labeled datasets."""

from __future__ import annotations

import csv
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import CloudParseError, InvalidArgumentError
from .geometry import PointCloud, as_coords
from .rotations import random_rotor

FORMATS = ("xyz-ascii", "off", "csv")
_SUFFIXES = {".xyz": "xyz-ascii", ".txt": "xyz-ascii", ".pts": "xyz-ascii", ".off": "off", ".csv": "csv"}


def worker_count() -> int:
    """Worker cap from ``RQNN_THREADS`` (default 1)."""
    raw = os.environ.get("RQNN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidArgumentError("RQNN_THREADS", raw, "must be an integer") from None


def parallel_map(fn: Callable, items: Sequence, workers: Optional[int] = None) -> list:
    """Order-preserving map, threaded when more than one worker is allowed."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- files -------------------------------------------------------------------


def infer_format(path) -> str:
    fmt = _SUFFIXES.get(Path(path).suffix.lower())
    if fmt is None:
        raise InvalidArgumentError("path", str(path), f"cannot infer format, pass one of {FORMATS}")
    return fmt


def normalize_unit_sphere(xyz: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale the largest radius to 1."""
    centered = xyz - xyz.mean(axis=0)
    radius = np.sqrt(np.max(np.sum(centered * centered, axis=1)))
    if radius == 0.0:
        return centered
    return centered / radius


def _floats(path, lineno: int, fields: list[str]) -> list[float]:
    if len(fields) < 3:
        raise CloudParseError(path, lineno, f"expected 3 coordinates, got {len(fields)}")
    try:
        return [float(v) for v in fields[:3]]
    except ValueError as exc:
        raise CloudParseError(path, lineno, str(exc)) from None


def _content_lines(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            yield lineno, stripped


def _parse_xyz(path, text: str) -> list[list[float]]:
    return [_floats(path, n, line.split()) for n, line in _content_lines(text)]


def _parse_csv(path, text: str) -> list[list[float]]:
    rows = []
    for n, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or not "".join(row).strip():
            continue
        if n == 1 and not rows:
            try:
                float(row[0])
            except ValueError:
                continue  # header
        rows.append(_floats(path, n, [v.strip() for v in row]))
    return rows


def _parse_off(path, text: str) -> list[list[float]]:
    lines = list(_content_lines(text))
    if not lines or not lines[0][1].startswith("OFF"):
        raise CloudParseError(path, lines[0][0] if lines else 1, "missing OFF header")
    head_no, head = lines[0]
    rest = head[3:].split()
    body = lines[1:]
    if not rest:
        if not body:
            raise CloudParseError(path, head_no, "missing vertex/face counts")
        head_no, counts_line = body[0]
        rest = counts_line.split()
        body = body[1:]
    try:
        n_vertices = int(rest[0])
    except (ValueError, IndexError):
        raise CloudParseError(path, head_no, "malformed vertex/face counts") from None
    if len(body) < n_vertices:
        last = body[-1][0] if body else head_no
        raise CloudParseError(path, last, f"header declares {n_vertices} vertices, file has {len(body)} lines")
    return [_floats(path, n, line.split()) for n, line in body[:n_vertices]]


def load_cloud(path, format: Optional[str] = None, normalize: bool = False) -> PointCloud:  # noqa: A002
    fmt = format or infer_format(path)
    if fmt not in FORMATS:
        raise InvalidArgumentError("format", fmt, f"expected one of {FORMATS}")
    text = Path(path).read_text()
    if not text.strip():
        raise CloudParseError(path, None, "file is empty")
    parser = {"xyz-ascii": _parse_xyz, "csv": _parse_csv, "off": _parse_off}[fmt]
    rows = parser(path, text)
    if not rows:
        raise CloudParseError(path, None, "no points found")
    xyz = np.asarray(rows, dtype=np.float64)
    if normalize:
        xyz = normalize_unit_sphere(xyz)
    return PointCloud.from_xyz(xyz)


def save_cloud(cloud, path, format: Optional[str] = None) -> None:  # noqa: A002
    """Write coordinates with shortest round-trip decimals, so loading is bit-exact."""
    fmt = format or infer_format(path)
    xyz = as_coords(cloud)
    rows = [" ".join(repr(float(v)) for v in p) for p in xyz]
    if fmt == "xyz-ascii":
        text = "\n".join(rows) + "\n"
    elif fmt == "csv":
        text = "x,y,z\n" + "\n".join(r.replace(" ", ",") for r in rows) + "\n"
    elif fmt == "off":
        text = f"OFF\n{len(rows)} 0 0\n" + "\n".join(rows) + "\n"
    else:
        raise InvalidArgumentError("format", fmt, f"expected one of {FORMATS}")
    Path(path).write_text(text)


# -- datasets ----------------------------------------------------------------


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["synthetic-shapes", "file-dir"] = "synthetic-shapes"
    classes: list[str] = Field(default_factory=lambda: ["sphere", "cube", "planes"])
    points: int = Field(64, ge=8)
    n_train: int = Field(300, ge=1)
    n_test: int = Field(150, ge=1)
    seed: int = 0
    normalize: bool = True
    jitter: float = Field(0.01, ge=0)
    test_rotations: int = Field(10, ge=1)
    root: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "synthetic-shapes":
            unknown = set(self.classes) - set(SHAPES)
            if unknown:
                raise ValueError(f"unknown synthetic classes {sorted(unknown)}; known: {sorted(SHAPES)}")
        elif self.root is None:
            raise ValueError("file-dir datasets need a root directory")
        if not self.classes and self.kind == "synthetic-shapes":
            raise ValueError("at least one class is required")
        return self


@dataclass
class Dataset:
    classes: list[str]
    train_xyz: np.ndarray  # (n_train, points, 3)
    train_labels: np.ndarray
    test_xyz: np.ndarray  # unrotated test clouds
    test_labels: np.ndarray
    rotated_xyz: np.ndarray  # (n_test * rotations, points, 3); copy r of cloud i sits at i * rotations + r
    rotated_labels: np.ndarray

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.train_xyz, self.train_labels, self.test_xyz, self.test_labels,
                    self.rotated_xyz, self.rotated_labels):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(rng, n):
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    face = rng.integers(0, 3, size=n)
    sign = rng.choice([-1.0, 1.0], size=n)
    pts[np.arange(n), face] = sign
    return pts


def _planes(rng, n, half_gap: float = 0.5):
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    pts[:, 2] = rng.choice([-half_gap, half_gap], size=n)
    return pts


SHAPES: dict[str, Callable] = {"sphere": _sphere, "cube": _cube, "planes": _planes}


def _sample(spec: DatasetSpec, label: int, seed: np.random.SeedSequence, rotations: int) -> tuple:
    rng = np.random.default_rng(seed)
    xyz = SHAPES[spec.classes[label]](rng, spec.points)
    xyz = xyz + spec.jitter * rng.normal(size=xyz.shape)
    if spec.normalize:
        xyz = normalize_unit_sphere(xyz)
    rotated = [random_rotor(rng).matrix() @ xyz.T for _ in range(rotations)]
    return xyz, [r.T for r in rotated]


def _balanced_labels(n: int, n_classes: int) -> np.ndarray:
    return np.arange(n) % n_classes


def synth_dataset(spec: DatasetSpec) -> Dataset:
    """Generate (or load) a labeled dataset; identical bytes for identical specs.

    Classes are balanced round-robin. Every test cloud is also stored under
    ``test_rotations`` uniformly random rotations.
    """
    if spec.kind == "file-dir":
        return _file_dataset(spec)
    k = len(spec.classes)
    train_labels = _balanced_labels(spec.n_train, k)
    test_labels = _balanced_labels(spec.n_test, k)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_train + spec.n_test)
    jobs = [(int(lab), seeds[i], 0) for i, lab in enumerate(train_labels)]
    jobs += [(int(lab), seeds[spec.n_train + i], spec.test_rotations) for i, lab in enumerate(test_labels)]
    results = parallel_map(lambda job: _sample(spec, *job), jobs)
    train = np.stack([r[0] for r in results[:spec.n_train]])
    test = np.stack([r[0] for r in results[spec.n_train:]])
    rotated = np.stack([c for r in results[spec.n_train:] for c in r[1]])
    return Dataset(list(spec.classes), train, train_labels, test, test_labels, rotated,
                   np.repeat(test_labels, spec.test_rotations))


def _file_dataset(spec: DatasetSpec) -> Dataset:
    """One sub-directory per class; files are subsampled to ``points`` without replacement."""
    root = Path(spec.root)
    classes = list(spec.classes) or sorted(p.name for p in root.iterdir() if p.is_dir())
    rng = np.random.default_rng(spec.seed)
    clouds, labels = [], []
    for label, name in enumerate(classes):
        files = sorted(f for f in (root / name).iterdir() if f.suffix.lower() in _SUFFIXES)
        for f in files:
            xyz = load_cloud(f).xyz
            if len(xyz) < spec.points:
                raise InvalidArgumentError("points", spec.points, f"{f} has only {len(xyz)} points")
            xyz = xyz[np.sort(rng.choice(len(xyz), spec.points, replace=False))]
            clouds.append(normalize_unit_sphere(xyz) if spec.normalize else xyz)
            labels.append(label)
    if len(clouds) < spec.n_train + spec.n_test:
        raise InvalidArgumentError("dataset", len(clouds), f"fewer clouds than n_train + n_test under {root}")
    order = rng.permutation(len(clouds))
    xyz = np.stack(clouds)[order]
    labels = np.asarray(labels)[order]
    test = xyz[spec.n_train:spec.n_train + spec.n_test]
    rotated = np.stack([random_rotor(rng).matrix() @ c.T for c in test for _ in range(spec.test_rotations)])
    return Dataset(classes, xyz[:spec.n_train], labels[:spec.n_train], test,
                   labels[spec.n_train:spec.n_train + spec.n_test], np.transpose(rotated, (0, 2, 1)),
                   np.repeat(labels[spec.n_train:spec.n_train + spec.n_test], spec.test_rotations))
