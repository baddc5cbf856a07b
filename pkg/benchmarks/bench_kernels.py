"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time for each backend,
the speedup and the max absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np

from sharecause._backend import COMPILED, fallback, kernels


def mf_case(rng, n_users=2000, n_items=300, dim=64, batch=1024):
    U = rng.normal(scale=0.1, size=(n_users, dim))
    V = rng.normal(scale=0.1, size=(n_items, dim))
    users = rng.integers(n_users, size=batch)
    pos = rng.integers(n_items, size=batch)
    neg = (pos + 1 + rng.integers(n_items - 1, size=batch)) % n_items
    coef = rng.uniform(0, 3, size=batch)

    def run(mod):
        gU, gV = np.zeros_like(U), np.zeros_like(V)
        loss = mod.mf_triplet_grad(U, V, users, pos, neg, coef, 1.0 / batch, gU, gV)
        return np.concatenate([[loss], gU.ravel(), gV.ravel()])
    return run


def rmsprop_case(rng, n=2000 * 64):
    p0, g = rng.normal(size=n), rng.normal(size=n)

    def run(mod):
        p, acc = p0.copy(), np.zeros(n)
        for _ in range(5):
            mod.rmsprop_update(p, g, acc, 1e-2, 0.9, 1e-8)
        return p
    return run


def silhouette_case(rng, n=1500, dim=16):
    X = rng.normal(size=(n, dim))
    labels = rng.integers(-1, 4, size=n)

    def run(mod):
        return mod.cluster_distance_sums(X, labels, 4).ravel()
    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not COMPILED:
        print("compiled kernels unavailable; build with `pip install -e . --no-build-isolation`")
        return
    rng = np.random.default_rng(0)
    cases = {"mf_triplet_grad": mf_case(rng), "rmsprop_update": rmsprop_case(rng),
             "cluster_distance_sums": silhouette_case(rng)}
    print(f"{'kernel':24s} {'compiled_ms':>12s} {'numpy_ms':>10s} {'speedup':>8s} {'max_diff':>10s}")
    for name, run in cases.items():
        tc = min(timeit.repeat(lambda: run(kernels), number=1, repeat=args.repeat))
        tf = min(timeit.repeat(lambda: run(fallback), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(run(kernels) - run(fallback))))
        print(f"{name:24s} {tc * 1e3:12.3f} {tf * 1e3:10.3f} {tf / tc:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
