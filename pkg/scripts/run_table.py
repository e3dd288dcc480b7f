"""Seed-averaged Acc_ALL / FR for every method on the desk-scale blob stream.

    python3 scripts/run_table.py --seeds 5 --memory 60
"""

import argparse
import time

import numpy as np

from fedmes.federation import ExperimentPlan, run_experiment
from fedmes.inference import InferenceConfig
from fedmes.nn_core import ModelSpec
from fedmes.tasks import StreamSpec
from fedmes.trainer import METHODS, TrainerConfig


def desk_plan(method, seed, memory_size=60, local_epochs=5, rounds=5, optimizer="sgd"):
    stream = StreamSpec(n_clients=5, T=4, classes_per_task=(2, 2), num_classes=10, input_dim=10,
                        samples_per_class_train=50, samples_per_class_test=20, class_sep=3.0,
                        disjoint_tasks=True, seed=seed)
    return ExperimentPlan(
        model=ModelSpec(10, (32,), 10), stream=stream,
        trainer=TrainerConfig(method=method, batch_size=40, local_epochs=local_epochs, optimizer=optimizer),
        inference=InferenceConfig(theta=0.5, K=5), rounds_per_task=rounds, memory_size=memory_size,
        master_seed=seed)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--memory", type=int, default=60)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--optimizer", default="sgd", choices=["sgd", "adam"])
    p.add_argument("--methods", nargs="+", default=list(METHODS))
    args = p.parse_args()

    start = time.perf_counter()
    print(f"{'method':<14}{'Acc_ALL':>16}{'FR':>16}")
    for method in args.methods:
        reports = [run_experiment(desk_plan(method, s, args.memory, args.epochs, args.rounds, args.optimizer))
                   for s in range(args.seeds)]
        acc = np.array([r.acc_all for r in reports])
        fr = np.array([r.fr for r in reports])
        print(f"{method:<14}{acc.mean():>10.3f}±{acc.std():.3f}{fr.mean():>10.3f}±{fr.std():.3f}")
    print(f"elapsed {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
