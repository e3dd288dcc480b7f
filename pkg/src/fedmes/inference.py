"""Task-oblivious prediction: memory KNN with a Gaussian kernel mixed into the model softmax.

Nothing here takes a task identifier; the same path serves every test sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from fedmes.memory import EmptyMemoryError
from fedmes.nn_core import ModelSpec, forward, softmax


@dataclass
class InferenceConfig:
    theta: float = 0.5
    K: int = 9
    # False gives the model-only path (the no-local-inference ablation and all baselines)
    local_inference: bool = True

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class RLPair:
    embedding: np.ndarray
    label: int
    insertion_seq: int


@dataclass
class PairTable:
    """Column-wise R-L pairs, for vectorized queries."""

    embeddings: np.ndarray
    labels: np.ndarray
    seqs: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: List[RLPair]):
        return cls(np.stack([p.embedding for p in pairs]),
                   np.array([p.label for p in pairs], dtype=np.int64),
                   np.array([p.insertion_seq for p in pairs], dtype=np.int64))

    def __len__(self):
        return len(self.labels)


def build_rl_pairs(spec: ModelSpec, client) -> List[RLPair]:
    entries = client.memory.entries
    if not entries:
        return []
    _, emb = forward(spec, client.local_params, np.stack([e.input for e in entries]))
    return [RLPair(emb[i], e.label, e.insertion_seq) for i, e in enumerate(entries)]


def knn_query(pairs: List[RLPair], query_embedding, K: int):
    """Return ``(neighbors, distances)`` sorted by distance, ties by insertion order."""
    if not pairs:
        raise EmptyMemoryError("no R-L pairs to search")
    table = PairTable.from_pairs(pairs)
    dist = np.linalg.norm(table.embeddings - np.asarray(query_embedding), axis=1)
    order = np.lexsort((table.seqs, dist))[:min(K, len(pairs))]
    return [pairs[i] for i in order], dist[order]


def gaussian_vote(labels, distances, num_classes: int) -> np.ndarray:
    """Kernel-weighted class distribution from neighbor labels and distances."""
    scores = np.zeros(num_classes)
    np.add.at(scores, np.asarray(labels, dtype=np.int64), np.exp(-np.asarray(distances, dtype=np.float64)))
    total = scores.sum()
    if total == 0:
        # every neighbor underflowed; fall back to the nearest one's label
        scores[int(np.asarray(labels)[0])] = 1.0
        total = 1.0
    return scores / total


def knn_probs(table: PairTable, query_embeddings: np.ndarray, K: int, num_classes: int) -> np.ndarray:
    """Batched KNN vote; row ``i`` is the class distribution for query ``i``."""
    diff = query_embeddings[:, None, :] - table.embeddings[None, :, :]
    dist = np.sqrt(np.einsum("qmd,qmd->qm", diff, diff))
    k = min(K, len(table))
    out = np.empty((len(query_embeddings), num_classes))
    for q in range(len(query_embeddings)):
        order = np.lexsort((table.seqs, dist[q]))[:k]
        out[q] = gaussian_vote(table.labels[order], dist[q, order], num_classes)
    return out


def predict(spec: ModelSpec, client, x, config: InferenceConfig, pairs=None) -> np.ndarray:
    """Mixed class distribution for one sample (1-D ``x``) or a batch (2-D ``x``)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    logits, emb = forward(spec, client.local_params, X)
    model = softmax(logits)
    if not config.local_inference or client.memory.is_empty() or config.theta == 0.0:
        out = model
    else:
        if pairs is None:
            pairs = build_rl_pairs(spec, client)
        b = knn_probs(PairTable.from_pairs(pairs), emb, config.K, spec.num_classes)
        out = config.theta * b + (1.0 - config.theta) * model
    return out[0] if single else out


def predict_label(spec: ModelSpec, client, x, config: InferenceConfig, pairs=None):
    # np.argmax returns the first maximum, i.e. the smallest class index on ties
    return np.argmax(predict(spec, client, x, config, pairs=pairs), axis=-1)
