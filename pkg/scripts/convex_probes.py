"""Quadratic probes of the two update rules.

Part 1 repeats exact correction steps on memory/current quadratic pairs and prints the
memory-loss gap and whether the transfer condition comes back. Part 2 runs proximal
personalization over per-client quadratics and prints the ratio of personal to global
squared error per round.

    python3 scripts/convex_probes.py
"""

import numpy as np

from fedmes.federation import aggregate
from fedmes.memory import MemoryBuffer
from fedmes.nn_core import Minibatch
from fedmes.tasks import TaskDataset
from fedmes.trainer import ClientState, ConvexProbe, ProbeObjective, TrainerConfig, project_gradient, run_local_round


def correction_probe(trials=20, steps=1000, eta=0.02, seed=0):
    rng = np.random.default_rng(seed)
    done = 0
    while done < trials:
        mem, cur = ConvexProbe.random(3, rng, cond=5.0), ConvexProbe.random(3, rng, cond=5.0, scale=0.5)
        w = rng.normal(size=3)
        if cur.grad(w) @ mem.grad(w) >= 0:
            continue
        done += 1
        start, flip_at = mem.loss(w), None
        for s in range(steps):
            g, gm = cur.grad(w), mem.grad(w)
            if g @ gm >= 0:
                flip_at = s
                break
            w = w - eta * project_gradient(g, gm)
        print(f"pair {done:2d}: memory loss {start:.4f} -> {mem.loss(w):.4f} (optimum 0), "
              f"transfer condition back at step {flip_at}")


def federation_probe(lam, seed, n=5, dim=4, rounds=40):
    rng = np.random.default_rng(seed)
    probes = [ConvexProbe.random(dim, rng, cond=5.0) for _ in range(n)]
    eye = np.eye(dim)
    inv = [np.linalg.inv(p.H + lam * eye) for p in probes]
    w_star = np.linalg.solve(eye - lam / n * sum(inv), sum(iv @ p.H @ p.a for iv, p in zip(inv, probes)) / n)
    wk_star = [iv @ (p.H @ p.a + lam * w_star) for iv, p in zip(inv, probes)]
    cfg = TrainerConfig(method="ditto", lambda_mode=lam, batch_size=1, local_epochs=1)
    dummy = TaskDataset(Minibatch(np.zeros((5, 1)), np.zeros(5, dtype=np.int64)),
                        Minibatch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64)), (0,), 1)
    w0 = 3 * rng.normal(size=dim)
    clients = [ClientState(k, w0.copy(), MemoryBuffer(1, 1), np.random.default_rng(k)) for k in range(n)]
    g = w0
    for r in range(1, rounds + 1):
        g = aggregate([run_local_round(c, g, dummy, cfg, ProbeObjective(p), round_index=r)
                       for c, p in zip(clients, probes)])
        G = np.sum((g - w_star) ** 2)
        e = max(np.sum((c.local_params - ws) ** 2) for c, ws in zip(clients, wk_star))
        if r % 5 == 0:
            print(f"lam={lam} seed={seed} round {r:3d}: global {G:.3e} personal {e:.3e} ratio {e / G:.2f}")


if __name__ == "__main__":
    correction_probe()
    for lam in (0.1, 1.0):
        federation_probe(lam, seed=0)
