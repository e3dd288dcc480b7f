"""Per-client non-IID task streams and their CSV representation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fedmes.nn_core import Minibatch

GENERATORS = ("gaussian_blobs", "rotated_two_moons", "csv_source")
_MASK64 = (1 << 64) - 1


class StreamConfigError(ValueError):
    pass


class StreamParseError(ValueError):
    pass


class StreamSchemaError(ValueError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def client_seed(seed: int, client_id: int) -> int:
    return (seed & _MASK64) ^ splitmix64(client_id)


@dataclass
class TaskDataset:
    train: Minibatch
    test: Minibatch
    class_ids: Tuple[int, ...]
    task_index: int


@dataclass
class TaskSequence:
    client_id: int
    tasks: List[TaskDataset]

    @property
    def T(self):
        return len(self.tasks)


@dataclass
class StreamSpec:
    n_clients: int = 3
    T: int = 3
    classes_per_task: Tuple[int, int] = (2, 5)
    samples_per_class_train: int = 50
    samples_per_class_test: int = 20
    generator: str = "gaussian_blobs"
    seed: int = 0
    num_classes: int = 10
    input_dim: int = 10
    # centroid spread for gaussian_blobs, in units of the unit noise std
    class_sep: float = 3.0
    noise: float = 1.0
    # draw each client's task subsets without reusing classes across tasks
    disjoint_tasks: bool = False

    def validate(self):
        lo, hi = self.classes_per_task
        if self.n_clients < 1 or self.T < 1:
            raise StreamConfigError("n_clients and T must be positive")
        if lo < 2 or hi < lo:
            raise StreamConfigError(f"classes_per_task must satisfy 2 <= lo <= hi, got {(lo, hi)}")
        if hi > self.num_classes:
            raise StreamConfigError(
                f"class pool of {self.num_classes} is smaller than classes_per_task hi={hi}"
            )
        if self.disjoint_tasks and self.T * hi > self.num_classes:
            raise StreamConfigError(
                f"disjoint_tasks needs T*hi={self.T * hi} <= num_classes={self.num_classes}"
            )
        if self.samples_per_class_train < 1 or self.samples_per_class_test < 1:
            raise StreamConfigError("samples per class must be positive")
        if self.generator not in GENERATORS:
            raise StreamConfigError(f"unknown generator {self.generator!r}")
        if self.generator == "rotated_two_moons" and self.input_dim < 2:
            raise StreamConfigError("rotated_two_moons needs input_dim >= 2")


def class_centroids(spec: StreamSpec) -> np.ndarray:
    """Fixed per-class centroids shared by every client."""
    rng = np.random.default_rng([spec.seed & _MASK64, 0xC1A55])
    directions = rng.normal(size=(spec.num_classes, spec.input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return spec.class_sep * directions


def _sample_blobs(centroids, label, count, noise, rng):
    return centroids[label] + noise * rng.normal(size=(count, centroids.shape[1]))


def _sample_moons(spec, label, count, rng):
    # classes 2j and 2j+1 are the two moons of pair j, rotated by 2*pi*j/pairs
    pairs = (spec.num_classes + 1) // 2
    angle = 2 * np.pi * (label // 2) / pairs
    t = rng.uniform(0, np.pi, size=count)
    if label % 2 == 0:
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    else:
        pts = np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    pts = pts - np.array([0.5, 0.25])
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    pts = spec.class_sep * pts @ rot.T
    out = 0.1 * spec.noise * rng.normal(size=(count, spec.input_dim))
    out[:, :2] += pts
    return out


def _draw_subsets(spec, rng) -> List[Tuple[int, ...]]:
    lo, hi = spec.classes_per_task
    pool = np.arange(spec.num_classes)
    subsets = []
    for _ in range(spec.T):
        size = int(rng.integers(lo, hi + 1))
        chosen = rng.choice(pool, size=size, replace=False)
        if spec.disjoint_tasks:
            pool = np.setdiff1d(pool, chosen)
        subsets.append(tuple(sorted(int(c) for c in chosen)))
    return subsets


def _split(spec, classes, rng, centroids, count):
    xs, ys = [], []
    for c in classes:
        if spec.generator == "gaussian_blobs":
            xs.append(_sample_blobs(centroids, c, count, spec.noise, rng))
        else:
            xs.append(_sample_moons(spec, c, count, rng))
        ys.append(np.full(count, c, dtype=np.int64))
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return Minibatch(X[order], y[order])


def generate_client_stream(spec: StreamSpec, client_id: int) -> TaskSequence:
    rng = np.random.default_rng(client_seed(spec.seed, client_id))
    centroids = class_centroids(spec) if spec.generator == "gaussian_blobs" else None
    tasks = []
    for t, classes in enumerate(_draw_subsets(spec, rng), start=1):
        train = _split(spec, classes, rng, centroids, spec.samples_per_class_train)
        test = _split(spec, classes, rng, centroids, spec.samples_per_class_test)
        tasks.append(TaskDataset(train, test, classes, t))
    return TaskSequence(client_id, tasks)


def generate_streams(spec: StreamSpec) -> List[TaskSequence]:
    spec.validate()
    if spec.generator == "csv_source":
        raise StreamConfigError("csv_source streams are read with load_csv_stream")
    return [generate_client_stream(spec, k) for k in range(spec.n_clients)]


def header(dim: int) -> List[str]:
    return ["client_id", "task_index", "split", "label"] + [f"f{j}" for j in range(1, dim + 1)]


def export_csv_stream(streams: Sequence[TaskSequence], path) -> None:
    """Write streams in the canonical ``client_id,task_index,split,label,f1..fd`` layout.

    Floats use ``repr`` so the file round-trips exactly.
    """
    dim = 0
    for seq in streams:
        for task in seq.tasks:
            dim = task.train.inputs.shape[1]
            break
        if dim:
            break
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header(dim))
    for seq in sorted(streams, key=lambda s: s.client_id):
        for task in seq.tasks:
            for split, mb in (("train", task.train), ("test", task.test)):
                for x, y in zip(mb.inputs, mb.labels):
                    writer.writerow([seq.client_id, task.task_index, split, int(y)]
                                    + [repr(float(v)) for v in x])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def load_csv_stream(path, spec: Optional[StreamSpec] = None) -> List[TaskSequence]:
    """Read a stream file back into validated task sequences.

    ``spec`` only contributes ``num_classes`` (label bound) when given.
    """
    num_classes = spec.num_classes if spec is not None else None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise StreamParseError(f"{path}: empty file (missing header)") from None
        if head[:4] != ["client_id", "task_index", "split", "label"]:
            raise StreamParseError(f"{path}:1: bad header {head[:4]}")
        dim = len(head) - 4
        if head[4:] != [f"f{j}" for j in range(1, dim + 1)]:
            raise StreamParseError(f"{path}:1: feature columns must be f1..f{dim}")

        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(head):
                raise StreamSchemaError(
                    f"{path}:{lineno}: expected {len(head)} fields, got {len(row)}"
                )
            try:
                cid, tidx, label = int(row[0]), int(row[1]), int(row[3])
                feats = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise StreamParseError(f"{path}:{lineno}: {exc}") from None
            split = row[2]
            if split not in ("train", "test"):
                raise StreamParseError(f"{path}:{lineno}: split must be train or test, got {split!r}")
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise StreamSchemaError(f"{path}:{lineno}: label {label} outside [0, {num_classes})")
            if not np.all(np.isfinite(feats)):
                raise StreamSchemaError(f"{path}:{lineno}: non-finite feature")
            rows.setdefault(cid, {}).setdefault(tidx, {"train": ([], []), "test": ([], [])})
            xs, ys = rows[cid][tidx][split]
            xs.append(feats)
            ys.append(label)

    streams = []
    for cid in sorted(rows):
        tasks = []
        indices = sorted(rows[cid])
        if indices != list(range(1, len(indices) + 1)):
            raise StreamSchemaError(f"{path}: client {cid} task indices {indices} are not 1..T")
        for tidx in indices:
            parts = {}
            for split in ("train", "test"):
                xs, ys = rows[cid][tidx][split]
                parts[split] = Minibatch(np.array(xs, dtype=np.float64).reshape(-1, dim),
                                         np.array(ys, dtype=np.int64))
            if len(parts["train"]) == 0:
                raise StreamSchemaError(f"{path}: client {cid} task {tidx} has no train rows")
            classes = tuple(sorted(set(parts["train"].labels.tolist()) | set(parts["test"].labels.tolist())))
            tasks.append(TaskDataset(parts["train"], parts["test"], classes, tidx))
        streams.append(TaskSequence(cid, tasks))
    return streams
