"""Benchmark the batched cartpole rollout kernel: numba vs numpy backend.

The kernel dominates experiment runtime (per control round it rolls
n_samples x n_dynamics_samples trajectories over the planning horizon).
Usage: python benchmarks/bench_rollout.py [--samples N] [--streams K]
       [--horizon H] [--repeats R]
"""

import argparse
import time

import numpy as np

from mirrormpc import backend
from mirrormpc.cartpole import CartpoleConfig, CartpoleCost, CartpoleDynamics
from mirrormpc.simulation import evaluate_sequences


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=1000)
    parser.add_argument("--streams", type=int, default=10)
    parser.add_argument("--horizon", type=int, default=50)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    cfg = CartpoleConfig()
    dyn = CartpoleDynamics.planning_model(cfg, clamp=cfg.control_clamp)
    cost = CartpoleCost()
    rng = np.random.default_rng(0)
    seqs = rng.normal(0.0, 2.0, size=(args.samples, args.horizon, 1))
    streams = rng.standard_normal((args.streams, args.horizon, 1))
    x0 = np.zeros(4)
    steps = args.samples * args.streams * args.horizon

    names = ["numpy"] + (["numba"] if backend.HAVE_NUMBA else [])
    results = {}
    for name in names:
        backend.use(name)
        evaluate_sequences(dyn, cost, x0, seqs, streams)  # warm-up / JIT
        start = time.perf_counter()
        for _ in range(args.repeats):
            out = evaluate_sequences(dyn, cost, x0, seqs, streams)
        elapsed = (time.perf_counter() - start) / args.repeats
        results[name] = (elapsed, out)
        print(f"{name:6s}: {elapsed * 1e3:8.2f} ms per batch  ({steps / elapsed / 1e6:7.1f} M steps/s)")

    if len(results) == 2:
        rel = np.max(
            np.abs(results["numba"][1] - results["numpy"][1]) / np.abs(results["numpy"][1])
        )
        print(f"speedup: {results['numpy'][0] / results['numba'][0]:.1f}x, max rel deviation {rel:.2e}")


if __name__ == "__main__":
    main()
