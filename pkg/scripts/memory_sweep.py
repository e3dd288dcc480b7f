"""Acc_ALL of fedmes as the memory budget grows, on the run_table stream.

    python3 scripts/memory_sweep.py --sizes 10 30 60 120
"""

import argparse

import numpy as np

from fedmes.federation import run_experiment
from run_table import desk_plan


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[10, 30, 60, 120])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--method", default="fedmes")
    args = p.parse_args()
    for m in args.sizes:
        acc = np.array([run_experiment(desk_plan(args.method, s, memory_size=m)).acc_all
                        for s in range(args.seeds)])
        print(f"m={m:<5d} Acc_ALL {acc.mean():.3f}±{acc.std():.3f}")


if __name__ == "__main__":
    main()
