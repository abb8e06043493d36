#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-NumPy fallback.

Runs each hot kernel at detector-scale shapes with both backends, prints
best-of-N per-call times and the worst numeric disagreement. The numba
path is warmed up first so JIT compilation is not timed.

    python3 benchmarks/bench_kernels.py --repeats 20
"""

import argparse
import time

import numpy as np

from byteveil.kernels import np_backend

try:
    from byteveil.kernels import nb_backend
except ImportError:
    nb_backend = None

D, E, WINDOW, STRIDE, C, Q = 16384, 8, 512, 512, 64, 2048


def make_inputs(seed: int):
    rng = np.random.default_rng(seed)
    Z = rng.normal(0.0, 0.4, (D, E))
    Wr = rng.normal(0.0, 0.05, (C, WINDOW, E))
    Ws = rng.normal(0.0, 0.05, (C, WINDOW, E))
    b = rng.normal(0.0, 0.1, C)
    n_rows = (D - WINDOW) // STRIDE + 1
    tstar = rng.integers(0, n_rows, C).astype(np.int64)
    dur = rng.normal(0.0, 1.0, C)
    dus = rng.normal(0.0, 1.0, C)
    M = rng.normal(0.0, 1.0, (256, E))
    Zp = M[rng.integers(0, 256, Q)]
    Wg = rng.normal(0.0, 0.01, (Q, E))
    Wg[:: 50] = 0.0  # a few zero-gradient positions
    cur = rng.integers(0, 256, Q).astype(np.int64)
    return {
        "conv1d": (Z, Wr, b, STRIDE, n_rows),
        "pool_backward_to_z": (tstar, dur, dus, Wr, Ws, STRIDE, D),
        "select_bytes_batch": (Zp, Wg, M, cur),
    }


def best_of(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    inputs = make_inputs(args.seed)
    if nb_backend is not None:
        for name, a in inputs.items():
            getattr(nb_backend, name)(*a)  # warm-up: compile outside timing

    print(f"{'kernel':<22}{'numpy':>12}{'numba':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, a in inputs.items():
        np_fn = getattr(np_backend, name)
        t_np = best_of(np_fn, a, args.repeats)
        if nb_backend is None:
            print(f"{name:<22}{t_np * 1e3:>10.3f}ms{'-':>12}{'-':>10}{'-':>14}")
            continue
        nb_fn = getattr(nb_backend, name)
        t_nb = best_of(nb_fn, a, args.repeats)
        diff = np.max(np.abs(np.asarray(np_fn(*a), dtype=np.float64)
                             - np.asarray(nb_fn(*a), dtype=np.float64)))
        print(f"{name:<22}{t_np * 1e3:>10.3f}ms{t_nb * 1e3:>10.3f}ms"
              f"{t_np / t_nb:>9.1f}x{diff:>14.2e}")
    if nb_backend is None:
        print("\nnumba not importable: compiled column skipped")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
