"""Benchmark the path-aggregation kernel: compiled extension vs numpy fallback.

Usage: python benchmarks/bench_sgm.py [--size 256] [--disparities 64] [--repeat 3]
"""

import argparse
import time

import numpy as np

from stereopipe.sgm import SgmParams, aggregate_paths, compute_disparity
from stereopipe.sgm.pipeline import AGGREGATE_BACKEND


def time_call(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--disparities", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, d = args.size, args.disparities
    cost = rng.integers(0, 600, (n, n, d)).astype(np.uint16)
    print(f"cost volume {n}x{n}x{d}, 8 paths, default backend: {AGGREGATE_BACKEND}")

    results = {}
    for backend in ("numpy", "cython"):
        try:
            out = aggregate_paths(cost, 200, 800, 8, backend=backend)
            t = time_call(lambda: aggregate_paths(cost, 200, 800, 8, backend=backend),
                          args.repeat)
            results[backend] = (t, out)
            print(f"  aggregate_paths[{backend}]: {t * 1e3:8.1f} ms")
        except RuntimeError as exc:
            print(f"  aggregate_paths[{backend}]: unavailable ({exc})")
    if len(results) == 2:
        same = np.array_equal(results["numpy"][1], results["cython"][1])
        speedup = results["numpy"][0] / results["cython"][0]
        print(f"  bit-identical: {same}, speedup: {speedup:.1f}x")

    right = rng.integers(0, 256, (n, n)).astype(np.uint8)
    left = np.roll(right, 12, axis=1)
    params = SgmParams(num_disparities=d).validated()
    for backend in results:
        t = time_call(lambda: compute_disparity(left, right, params, backend=backend), 1)
        print(f"  compute_disparity[{backend}]: {t * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
