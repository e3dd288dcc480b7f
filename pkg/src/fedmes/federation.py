"""In-process federation: broadcast, local rounds, mean aggregation, memory append, evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from fedmes.inference import InferenceConfig, build_rl_pairs, predict_label
from fedmes.memory import MemoryBuffer, default_quota
from fedmes.metrics import AccuracyTensor, MetricsReport
from fedmes.nn_core import MLPObjective, ModelSpec, init_params
from fedmes.tasks import StreamSpec, TaskSequence, client_seed, generate_streams
from fedmes.trainer import ClientState, TrainerConfig, run_local_round

log = logging.getLogger(__name__)


class NumericDivergenceError(FloatingPointError):
    pass


@dataclass
class ServerState:
    global_params: np.ndarray
    round: int = 0
    task: int = 1


@dataclass
class ExperimentPlan:
    model: ModelSpec
    stream: StreamSpec = field(default_factory=StreamSpec)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    rounds_per_task: int = 10
    memory_size: int = 150
    per_task_quota: Optional[int] = None
    master_seed: int = 0
    eval_every_round: bool = False

    @property
    def n_clients(self):
        return self.stream.n_clients

    @property
    def T(self):
        return self.stream.T

    def validate(self):
        self.stream.validate()
        if self.rounds_per_task < 0:
            raise ValueError("rounds_per_task must be >= 0")
        if self.model.input_dim != self.stream.input_dim:
            raise ValueError("model.input_dim must equal stream.input_dim")
        if self.model.num_classes < self.stream.num_classes:
            raise ValueError("model.num_classes must cover the stream's class pool")


def aggregate(uploads: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted mean, summed in the given (client_id ascending) order."""
    if not uploads:
        raise ValueError("nothing to aggregate")
    size = len(uploads[0])
    total = np.zeros(size)
    for u in uploads:
        if len(u) != size:
            raise ValueError(f"upload length {len(u)} != {size}")
        total = total + u
    return total / len(uploads)


def make_clients(plan: ExperimentPlan, w0: np.ndarray) -> List[ClientState]:
    quota = plan.per_task_quota or default_quota(plan.memory_size, plan.T)
    return [
        ClientState(
            client_id=k,
            local_params=w0.copy(),
            memory=MemoryBuffer(plan.memory_size, quota),
            rng=np.random.default_rng([client_seed(plan.master_seed, k), 1]),
        )
        for k in range(plan.n_clients)
    ]


def run_task(server: ServerState, clients: List[ClientState], streams: List[TaskSequence], t: int,
             plan: ExperimentPlan, objective, trace: Optional[Callable] = None,
             on_round: Optional[Callable] = None) -> None:
    """All rounds of task ``t``, then each client samples the task into its memory."""
    server.task = t
    for client in clients:
        client.current_task = t
    for r in range(1, plan.rounds_per_task + 1):
        server.round = r
        broadcast = server.global_params.copy()
        round_index = (t - 1) * plan.rounds_per_task + (r - 1)
        uploads = []
        for client, seq in zip(clients, streams):
            up = run_local_round(client, broadcast.copy(), seq.tasks[t - 1], plan.trainer, objective,
                                 round_index=round_index, trace=trace)
            if not np.all(np.isfinite(up)):
                raise NumericDivergenceError(
                    f"non-finite parameters from client {client.client_id} (task {t}, round {r})")
            uploads.append(up)
        server.global_params = aggregate(uploads)
        if on_round is not None:
            on_round(t, r)
    if plan.trainer.uses_memory:
        for client, seq in zip(clients, streams):
            client.memory.append_task_samples(seq.tasks[t - 1], client.rng.integers(2**63))


def evaluate_client(spec: ModelSpec, client: ClientState, seq: TaskSequence, t: int,
                    config: InferenceConfig) -> List[float]:
    """Task-oblivious accuracy on the test sets of tasks 1..t."""
    pairs = build_rl_pairs(spec, client) if config.local_inference else None
    accs = []
    for task in seq.tasks[:t]:
        pred = predict_label(spec, client, task.test.inputs, config, pairs=pairs)
        accs.append(float(np.mean(pred == task.test.labels)))
    return accs


def effective_inference(plan: ExperimentPlan) -> InferenceConfig:
    lip = plan.inference.local_inference and plan.trainer.method == "fedmes"
    return replace(plan.inference, local_inference=lip)


def run_experiment(plan: ExperimentPlan, streams: Optional[List[TaskSequence]] = None,
                   trace: Optional[Callable] = None) -> MetricsReport:
    plan.validate()
    if streams is None:
        streams = generate_streams(plan.stream)
    spec = plan.model
    objective = MLPObjective(spec)
    w0 = init_params(spec, np.random.default_rng([plan.master_seed, 0]))
    server = ServerState(w0.copy())
    clients = make_clients(plan, w0)
    icfg = effective_inference(plan)
    tensor = AccuracyTensor(plan.T, plan.n_clients)
    curve = []

    def on_round(t, r):
        accs = [np.mean(evaluate_client(spec, c, s, t, icfg)) for c, s in zip(clients, streams)]
        curve.append([t, r, float(np.mean(accs))])

    for t in range(1, plan.T + 1):
        run_task(server, clients, streams, t, plan, objective, trace=trace,
                 on_round=on_round if plan.eval_every_round else None)
        for k, (client, seq) in enumerate(zip(clients, streams), start=1):
            for i, acc in enumerate(evaluate_client(spec, client, seq, t, icfg), start=1):
                tensor.set(t, i, k, acc)
        log.debug("method=%s seed=%s finished task %d", plan.trainer.method, plan.master_seed, t)
    return MetricsReport.from_tensor(tensor, curve=curve)
