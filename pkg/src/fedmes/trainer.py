"""Local client training: memory-gated proximal step or projected correction step.

Every mini-batch step compares the current-task gradient with the gradient
on the episodic memory. When they agree (non-negative inner product, or no
memory yet) the client takes a proximal step toward the broadcast global
model; otherwise it steps along the current gradient with its memory
component removed, and the global model plays no part in that step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np

from fedmes.memory import MemoryBuffer
from fedmes.nn_core import Minibatch
from fedmes.tasks import TaskDataset

METHODS = ("fedmes", "fedmes_nolip", "fedavg", "ditto", "fedagem")
MEMORY_METHODS = ("fedmes", "fedmes_nolip", "fedagem")
PERSONAL_METHODS = ("fedmes", "fedmes_nolip", "ditto")
DITTO_DEFAULT_LAMBDA = 0.1


class DegenerateMemoryGradient(ValueError):
    pass


@dataclass
class TrainerConfig:
    method: str = "fedmes"
    eta1: float = 0.05
    eta2: float = 0.05
    # "dynamic", a fixed float in [0, 2], or None for the method default
    lambda_mode: Union[str, float, None] = None
    batch_size: int = 40
    local_epochs: int = 10
    # "full" or an integer memory sub-batch size
    mem_batch: Union[str, int] = "full"
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # per-round multiplicative learning-rate decay; None -> 0.95 for adam, 1.0 for sgd
    lr_decay: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        mode = self.lambda_mode
        if mode is not None and mode != "dynamic":
            if isinstance(mode, str) or not 0.0 <= float(mode) <= 2.0:
                raise ValueError(f"fixed lambda must be a number in [0, 2], got {mode!r}")
        if self.mem_batch != "full" and (isinstance(self.mem_batch, str) or int(self.mem_batch) < 1):
            raise ValueError(f"mem_batch must be 'full' or a positive integer, got {self.mem_batch!r}")

    @property
    def uses_memory(self):
        return self.method in MEMORY_METHODS

    @property
    def personalized(self):
        return self.method in PERSONAL_METHODS

    @property
    def resolved_lambda_mode(self):
        if self.method in ("fedavg", "fedagem"):
            return 0.0
        if self.lambda_mode is None:
            return DITTO_DEFAULT_LAMBDA if self.method == "ditto" else "dynamic"
        return self.lambda_mode

    @property
    def resolved_lr_decay(self):
        if self.lr_decay is not None:
            return self.lr_decay
        return 0.95 if self.optimizer == "adam" else 1.0


@dataclass
class ClientState:
    client_id: int
    local_params: np.ndarray
    memory: MemoryBuffer
    rng: np.random.Generator
    current_task: int = 1
    optimizer_state: dict = field(default_factory=dict)


@dataclass
class StepDiagnostics:
    inner_product: Optional[float]
    branch: str
    lambda_used: float
    loss_before: float
    loss_after: float

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


class JsonlTrace:
    """Appends one JSON object per local step to a file."""

    def __init__(self, path):
        self._fh = open(path, "a", encoding="utf-8")

    def __call__(self, diag: StepDiagnostics, **context):
        record = dict(asdict(diag), **context)
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ConvexProbe:
    """Quadratic ``0.5 (w-a)^T H (w-a)`` with known curvature bounds."""

    H: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if not np.allclose(self.H, self.H.T):
            raise ValueError("H must be symmetric")
        if self.c <= 0:
            raise ValueError("H must be positive definite")

    @property
    def c(self):
        return float(np.linalg.eigvalsh(self.H)[0])

    @property
    def L(self):
        return float(np.linalg.eigvalsh(self.H)[-1])

    def loss(self, w, batch=None):
        d = np.asarray(w) - self.a
        return float(0.5 * d @ self.H @ d)

    def grad(self, w, batch=None):
        return self.H @ (np.asarray(w) - self.a)

    @classmethod
    def random(cls, dim, rng, cond=10.0, scale=1.0):
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        eig = np.geomspace(1.0, cond, dim) if dim > 1 else np.array([1.0])
        return cls(q @ np.diag(eig) @ q.T, scale * rng.normal(size=dim))


class ProbeObjective:
    """Batch-independent objective over a ConvexProbe, for theory checks."""

    def __init__(self, probe: ConvexProbe):
        self.probe = probe

    def loss(self, params, batch):
        return self.probe.loss(params)

    def grad(self, params, batch):
        return self.probe.grad(params)


def lambda_from_loss(value: float) -> float:
    if value == 0:
        return 2.0
    with np.errstate(over="ignore", divide="ignore"):
        return float(2.0 / (1.0 + np.exp(-1.0 / value)))


def compute_lambda(objective, global_params, dataset) -> float:
    """Dynamic proximal weight from the global model's loss on local data."""
    batch = dataset.train if isinstance(dataset, TaskDataset) else dataset
    return lambda_from_loss(objective.loss(global_params, batch))


def _check_pair(g_cur, g_mem):
    g_cur = np.asarray(g_cur, dtype=np.float64)
    g_mem = np.asarray(g_mem, dtype=np.float64)
    if g_cur.shape != g_mem.shape:
        raise ValueError(f"gradient length mismatch: {g_cur.shape} vs {g_mem.shape}")
    return g_cur, g_mem


def check_transfer_condition(g_cur, g_mem) -> bool:
    g_cur, g_mem = _check_pair(g_cur, g_mem)
    if not np.any(g_mem):
        return True
    return bool(g_cur @ g_mem >= 0)


def project_gradient(g_cur, g_mem) -> np.ndarray:
    """Closest vector to ``g_cur`` (in L2) that does not oppose ``g_mem``."""
    g_cur, g_mem = _check_pair(g_cur, g_mem)
    denom = g_mem @ g_mem
    if denom == 0:
        raise DegenerateMemoryGradient("memory gradient has zero norm")
    return g_cur - (g_cur @ g_mem / denom) * g_mem


def optimizer_step(client: ClientState, direction, lr, config: TrainerConfig):
    if config.optimizer == "sgd":
        client.local_params = client.local_params - lr * direction
        return
    st = client.optimizer_state
    if "m" not in st:
        st["m"] = np.zeros_like(client.local_params)
        st["v"] = np.zeros_like(client.local_params)
        st["t"] = 0
    st["t"] += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    st["m"] = b1 * st["m"] + (1 - b1) * direction
    st["v"] = b2 * st["v"] + (1 - b2) * direction * direction
    m_hat = st["m"] / (1 - b1 ** st["t"])
    v_hat = st["v"] / (1 - b2 ** st["t"])
    client.local_params = client.local_params - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _memory_batch(client, config):
    if config.mem_batch == "full":
        return client.memory.as_full_batch()
    return client.memory.sample_batch(int(config.mem_batch), client.rng)


def _fixed_lambda(config):
    mode = config.resolved_lambda_mode
    return None if mode == "dynamic" else float(mode)


def local_step(client: ClientState, global_params, batch: Minibatch, config: TrainerConfig,
               objective, lam: Optional[float] = None, lr_scale: float = 1.0) -> StepDiagnostics:
    """One local iteration; exactly one of the two update rules runs."""
    if lam is None:
        lam = _fixed_lambda(config)
        if lam is None:
            lam = compute_lambda(objective, global_params, batch)
    w = client.local_params
    loss_before = objective.loss(w, batch)
    g_cur = objective.grad(w, batch)

    inner = None
    transfer = True
    if config.uses_memory and not client.memory.is_empty():
        g_mem = objective.grad(w, _memory_batch(client, config))
        inner = float(g_cur @ g_mem)
        transfer = check_transfer_condition(g_cur, g_mem)

    if transfer:
        direction = g_cur + lam * (w - global_params) if lam else g_cur
        optimizer_step(client, direction, lr_scale * config.eta1, config)
        branch, lam_used = "transfer", lam
    else:
        optimizer_step(client, project_gradient(g_cur, g_mem), lr_scale * config.eta2, config)
        branch, lam_used = "correction", 0.0
    return StepDiagnostics(inner, branch, lam_used, loss_before, objective.loss(client.local_params, batch))


def iterate_minibatches(data: Minibatch, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Minibatch(data.inputs[idx], data.labels[idx])


def run_local_round(client: ClientState, global_params, task_data: TaskDataset, config: TrainerConfig,
                    objective, round_index: int = 0,
                    trace: Optional[Callable] = None) -> np.ndarray:
    """Train the client for one communication round and return its upload."""
    global_params = np.asarray(global_params, dtype=np.float64)
    if not config.personalized:
        client.local_params = global_params.copy()
    lam = _fixed_lambda(config)
    if lam is None:
        lam = compute_lambda(objective, global_params, task_data)
    lr_scale = config.resolved_lr_decay ** round_index
    for epoch in range(config.local_epochs):
        for batch in iterate_minibatches(task_data.train, config.batch_size, client.rng):
            diag = local_step(client, global_params, batch, config, objective, lam=lam, lr_scale=lr_scale)
            if trace is not None:
                trace(diag, client=client.client_id, task=client.current_task,
                      round=round_index, epoch=epoch)
    return client.local_params.copy()
