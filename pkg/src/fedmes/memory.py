"""Bounded FIFO episodic memory, one per client."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from fedmes.nn_core import Minibatch
from fedmes.tasks import TaskDataset


class EmptyMemoryError(LookupError):
    pass


@dataclass
class MemoryEntry:
    input: np.ndarray
    label: int
    task_index: int
    insertion_seq: int


@dataclass
class MemoryBuffer:
    """Raw-input episodic memory.

    ``per_task_quota`` samples are taken from each finished task; once the
    buffer holds more than ``capacity`` entries the oldest are dropped first.
    """

    capacity: int
    per_task_quota: int
    entries: List[MemoryEntry] = field(default_factory=list)
    _next_seq: int = 0

    def __post_init__(self):
        if self.capacity < 1 or self.per_task_quota < 1:
            raise ValueError("capacity and per_task_quota must be positive")

    def __len__(self):
        return len(self.entries)

    def is_empty(self):
        return not self.entries

    def append_task_samples(self, dataset: TaskDataset, seed) -> None:
        rng = np.random.default_rng(seed)
        n = len(dataset.train)
        take = min(self.per_task_quota, n)
        if take == 0:
            return
        picked = np.sort(rng.choice(n, size=take, replace=False))
        for i in picked:
            self.entries.append(MemoryEntry(
                input=np.array(dataset.train.inputs[i], dtype=np.float64),
                label=int(dataset.train.labels[i]),
                task_index=dataset.task_index,
                insertion_seq=self._next_seq,
            ))
            self._next_seq += 1
        overflow = len(self.entries) - self.capacity
        if overflow > 0:
            del self.entries[:overflow]

    def _batch(self, entries):
        return Minibatch(np.stack([e.input for e in entries]),
                         np.array([e.label for e in entries], dtype=np.int64))

    def sample_batch(self, size: int, seed) -> Minibatch:
        if not self.entries:
            raise EmptyMemoryError("cannot sample from an empty memory")
        if size >= len(self.entries):
            return self._batch(self.entries)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(self.entries), size=size, replace=False))
        return self._batch([self.entries[i] for i in idx])

    def as_full_batch(self) -> Minibatch:
        if not self.entries:
            raise EmptyMemoryError("memory is empty")
        return self._batch(self.entries)

    def dump_csv(self, path, client_id: int = 0) -> None:
        """Debug dump in the task-stream column layout plus ``insertion_seq``."""
        dim = self.entries[0].input.shape[0] if self.entries else 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["client_id", "task_index", "split", "label"]
                       + [f"f{j}" for j in range(1, dim + 1)] + ["insertion_seq"])
            for e in self.entries:
                w.writerow([client_id, e.task_index, "train", e.label]
                           + [repr(float(v)) for v in e.input] + [e.insertion_seq])


def default_quota(capacity: int, T: Optional[int]) -> int:
    if T is None:
        raise ValueError("per-task quota must be configured when T is unknown")
    return max(1, capacity // T)
