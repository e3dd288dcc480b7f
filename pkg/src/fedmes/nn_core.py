"""Dense MLP over flat parameter vectors.

Parameters are stored layer by layer as ``W`` (``fan_in x fan_out``,
row-major) followed by ``b`` (``fan_out``). The embedding of a sample is the
activation of the last hidden layer, or the raw input when there is no hidden
layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np


class ContractError(ValueError):
    """Raised when array shapes do not match the model spec."""


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...] = field(default_factory=tuple)
    num_classes: int = 2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ContractError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ContractError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.num_classes < 2:
            raise ContractError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ("relu", "tanh"):
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def embed_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim


@dataclass
class Minibatch:
    inputs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def parameter_count(spec: ModelSpec) -> int:
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in spec.layer_dims)


def unpack(spec: ModelSpec, params: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``(W, b)`` views, one pair per layer."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != parameter_count(spec):
        raise ContractError(
            f"params length {params.shape} does not match parameter_count={parameter_count(spec)}"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_dims:
        W = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    chunks = []
    for fan_in, fan_out in spec.layer_dims:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _act(spec, z):
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_deriv(spec, z, a):
    if spec.activation == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _check_inputs(spec, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise ContractError(f"inputs must be a 2-D matrix, got ndim={inputs.ndim}")
    if inputs.shape[1] != spec.input_dim:
        raise ContractError(
            f"inputs have {inputs.shape[1]} columns but input_dim={spec.input_dim}"
        )
    return inputs


def _check_labels(spec, labels, batch):
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ContractError(f"labels shape {labels.shape} does not match batch size {batch}")
    if batch < 1:
        raise ContractError("batch must contain at least one sample")
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ContractError(f"labels must lie in [0, {spec.num_classes})")
    return labels.astype(np.int64)


def _forward_cache(spec, params, inputs):
    layers = unpack(spec, params)
    inputs = _check_inputs(spec, inputs)
    pre, post = [], [inputs]
    a = inputs
    for W, b in layers[:-1]:
        z = a @ W + b
        a = _act(spec, z)
        pre.append(z)
        post.append(a)
    W, b = layers[-1]
    logits = a @ W + b
    return layers, pre, post, logits


def forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(logits, embeddings)`` for a batch of inputs."""
    _, _, post, logits = _forward_cache(spec, params, inputs)
    return logits, post[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, computed with a log-sum-exp shift."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def loss(spec: ModelSpec, params: np.ndarray, batch: Minibatch) -> float:
    logits, _ = forward(spec, params, batch.inputs)
    labels = _check_labels(spec, batch.labels, logits.shape[0])
    return cross_entropy_from_logits(logits, labels)


def grad(spec: ModelSpec, params: np.ndarray, batch: Minibatch) -> np.ndarray:
    """Backprop gradient of the mean cross-entropy w.r.t. the flat params."""
    layers, pre, post, logits = _forward_cache(spec, params, batch.inputs)
    n = logits.shape[0]
    labels = _check_labels(spec, batch.labels, n)

    delta = softmax(logits)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        a_in = post[li]
        grads[li] = ((a_in.T @ delta).ravel(), delta.sum(axis=0))
        if li > 0:
            delta = (delta @ W.T) * _act_deriv(spec, pre[li - 1], post[li])
    return np.concatenate([part for gw, gb in grads for part in (gw, gb)])


def finite_diff_grad(spec: ModelSpec, params: np.ndarray, batch: Minibatch, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate. Test oracle only."""
    if h <= 0:
        raise ValueError("h must be positive")
    params = np.array(params, dtype=np.float64)
    out = np.empty_like(params)
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + h
        up = loss(spec, params, batch)
        params[i] = orig - h
        down = loss(spec, params, batch)
        params[i] = orig
        out[i] = (up - down) / (2 * h)
    return out


class MLPObjective:
    """Loss/gradient pair the trainer consumes, backed by an MLP."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def loss(self, params, batch):
        return loss(self.spec, params, batch)

    def grad(self, params, batch):
        return grad(self.spec, params, batch)
