"""Accuracy and forgetting metrics over the per-client accuracy tensor.

Indices ``t``, ``i``, ``k`` are 1-based in the public functions, matching how
tasks and checkpoints are numbered elsewhere; storage is 0-based.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np


class MissingEntryError(KeyError):
    pass


class AccuracyTensor:
    """``a[t, i, k]``: accuracy on task ``i`` after training task ``t`` on client ``k`` (``i <= t``)."""

    def __init__(self, T: int, n: int):
        self.T, self.n = T, n
        self.values = np.full((T, T, n), np.nan)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        out = cls(arr.shape[0], arr.shape[2])
        out.values[...] = arr
        out.values[np.triu_indices(out.T, 1)] = np.nan
        return out

    def set(self, t, i, k, value):
        if not 1 <= i <= t <= self.T:
            raise IndexError(f"a[{t},{i},{k}] undefined: need 1 <= i <= t <= {self.T}")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.values[t - 1, i - 1, k - 1] = value

    def get(self, t, i, k):
        v = self.values[t - 1, i - 1, k - 1]
        if i > t or np.isnan(v):
            raise MissingEntryError(f"a[{t},{i},{k}] missing")
        return float(v)

    def rows(self):
        for t in range(1, self.T + 1):
            for i in range(1, t + 1):
                for k in range(1, self.n + 1):
                    v = self.values[t - 1, i - 1, k - 1]
                    if not np.isnan(v):
                        yield t, i, k, float(v)


def avg_accuracy_at(k, t, tensor: AccuracyTensor) -> float:
    row = tensor.values[t - 1, :t, k - 1]
    if np.isnan(row).any():
        raise MissingEntryError(f"missing entries for client {k} after task {t}")
    return float(row.mean())


def acc_client(k, tensor: AccuracyTensor) -> float:
    return float(np.mean([avg_accuracy_at(k, t, tensor) for t in range(1, tensor.T + 1)]))


def acc_task(t, tensor: AccuracyTensor) -> float:
    return float(np.mean([avg_accuracy_at(k, t, tensor) for k in range(1, tensor.n + 1)]))


def acc_all(tensor: AccuracyTensor) -> float:
    return float(np.mean([[avg_accuracy_at(k, t, tensor) for t in range(1, tensor.T + 1)]
                          for k in range(1, tensor.n + 1)]))


def forgetting_rate(k, t, tensor: AccuracyTensor) -> float:
    """Mean over past tasks of best-earlier minus current accuracy.

    The best is taken over checkpoints ``i <= j <= t-1`` where task ``i``
    exists. Returns 0.0 for ``t == 1``; negative values mean backward transfer.
    """
    if t < 2:
        return 0.0
    a = tensor.values[:, :, k - 1]
    gaps = []
    for i in range(1, t):
        best = np.max(a[i - 1:t - 1, i - 1])
        gaps.append(best - a[t - 1, i - 1])
    out = float(np.mean(gaps))
    if np.isnan(out):
        raise MissingEntryError(f"missing entries for forgetting of client {k} at task {t}")
    return out


@dataclass
class MetricsReport:
    acc_all: float
    acc_client: List[float]
    acc_task: List[float]
    # forgetting[t-1][k-1]; row 0 is all zeros by convention
    forgetting: List[List[float]]
    tensor: AccuracyTensor = field(repr=False)
    # optional per-round Acc_Task learning curve: [(task, round, value)]
    curve: List[list] = field(default_factory=list)

    @property
    def fr(self) -> float:
        """Forgetting rate after the last task, averaged over clients."""
        return float(np.mean(self.forgetting[-1]))

    @property
    def fr_task(self) -> List[float]:
        return [float(np.mean(row)) for row in self.forgetting]

    @classmethod
    def from_tensor(cls, tensor: AccuracyTensor, curve=None):
        return cls(
            acc_all=acc_all(tensor),
            acc_client=[acc_client(k, tensor) for k in range(1, tensor.n + 1)],
            acc_task=[acc_task(t, tensor) for t in range(1, tensor.T + 1)],
            forgetting=[[forgetting_rate(k, t, tensor) for k in range(1, tensor.n + 1)]
                        for t in range(1, tensor.T + 1)],
            tensor=tensor,
            curve=list(curve or []),
        )

    def to_dict(self):
        return {
            "acc_all": self.acc_all,
            "fr": self.fr,
            "acc_client": self.acc_client,
            "acc_task": self.acc_task,
            "fr_task": self.fr_task,
            "forgetting": self.forgetting,
            "n_clients": self.tensor.n,
            "T": self.tensor.T,
            "forgetting_t1_defined": False,
            "curve": self.curve,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def tensor_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "i", "client", "accuracy"])
        for t, i, k, v in self.tensor.rows():
            w.writerow([t, i, k, repr(v)])
        return buf.getvalue()

    def long_rows(self, seed) -> List[list]:
        """Rows of ``seed, client, task, metric, value``; blank fields where an axis does not apply."""
        rows = [[seed, "", "", "acc_all", self.acc_all], [seed, "", "", "fr", self.fr]]
        rows += [[seed, k, "", "acc_client", v] for k, v in enumerate(self.acc_client, 1)]
        rows += [[seed, "", t, "acc_task", v] for t, v in enumerate(self.acc_task, 1)]
        rows += [[seed, k, t, "forgetting", v]
                 for t, row in enumerate(self.forgetting, 1) for k, v in enumerate(row, 1)]
        return rows


def seed_aggregate(reports: List[MetricsReport]) -> Dict[str, Dict[str, float]]:
    """Mean and population stddev of the scalar metrics across seeds."""
    out = {}
    for name in ("acc_all", "fr"):
        vals = np.array([getattr(r, name) for r in reports])
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
