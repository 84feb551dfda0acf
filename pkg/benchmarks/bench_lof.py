#!/usr/bin/env python3
"""Benchmark the compiled LOF kernel against the NumPy fallback.

Both backends implement the same contract (exhaustive pairwise distances,
tie-inclusive neighborhoods); this script times full-pool scoring across
pool sizes and verifies the outputs agree.

Usage: python benchmarks/bench_lof.py [--sizes 1000,2000,4000] [--dim 32] [--k 20]
"""

import argparse
import time

import numpy as np

from ard._kernels._lof_np import pool_lof as pool_lof_np

try:
    from ard._kernels._lof_cy import pool_lof as pool_lof_cy
except ImportError:
    pool_lof_cy = None


def time_backend(fn, pts, k, repeats=3):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(pts, k, 1e-12)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="500,1000,2000,4000")
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    rng = np.random.default_rng(0)
    print(f"dim={args.dim} k={args.k} repeats={args.repeats}")
    print(f"{'n':>7} {'numpy (s)':>11} {'cython (s)':>11} {'speedup':>8}  agreement")
    for n in sizes:
        pts = rng.normal(size=(n, args.dim))
        t_np, (s_np, _) = time_backend(pool_lof_np, pts, args.k, args.repeats)
        if pool_lof_cy is None:
            print(f"{n:>7} {t_np:>11.4f} {'n/a':>11} {'n/a':>8}  compiled kernel unavailable")
            continue
        t_cy, (s_cy, _) = time_backend(pool_lof_cy, pts, args.k, args.repeats)
        diff = float(np.abs(s_np - s_cy).max())
        print(f"{n:>7} {t_np:>11.4f} {t_cy:>11.4f} {t_np / t_cy:>7.2f}x  max|diff|={diff:.2e}")


if __name__ == "__main__":
    main()
