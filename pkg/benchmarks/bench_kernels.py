#!/usr/bin/env python3
"""Benchmark the jitted kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--repeat 200]

Times stayup's two hot kernels (BDeu family counting and the mixture score
matrix) on realistic shapes. The jit path is warmed before timing so
compilation cost is excluded.
"""

import argparse
import time

import numpy as np

from stayup import _kernels as kernels


def timeit(fn, args, repeat):
    fn(*args)  # warm-up / jit compile
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def bench_family_counts(repeat):
    rng = np.random.default_rng(0)
    print("family_counts: rows x parents        numpy        numba      speedup")
    for n_rows in (1000, 4000, 20000):
        for n_parents in (0, 2, 4):
            data = rng.integers(0, 2, size=(n_rows, 9)).astype(np.uint8)
            arities = np.full(9, 2, dtype=np.int64)
            parents = np.arange(1, 1 + n_parents, dtype=np.int64)
            args = (data, parents, 0, arities)
            t_np = timeit(kernels.family_counts_numpy, args, repeat)
            if kernels.family_counts_jit is None:
                print(f"  {n_rows:6d} x {n_parents}   {t_np * 1e6:10.1f} us    (no numba)")
                continue
            t_nb = timeit(kernels.family_counts_jit, args, repeat)
            print(
                f"  {n_rows:6d} x {n_parents}   {t_np * 1e6:10.1f} us "
                f"{t_nb * 1e6:10.1f} us   {t_np / t_nb:7.2f}x"
            )


def bench_poisson_scores(repeat):
    rng = np.random.default_rng(1)
    print("poisson_scores: students x comps     numpy        numba      speedup")
    for n_students in (500, 2000, 10000):
        for m in (2, 4):
            counts = rng.poisson(4.0, size=(n_students, 16)).astype(np.float64)
            rates = rng.uniform(0.2, 8.0, size=(m, 16))
            args = (counts, np.log(rates), rates.sum(axis=1))
            t_np = timeit(kernels.poisson_scores_numpy, args, repeat)
            if kernels.poisson_scores_jit is None:
                print(f"  {n_students:6d} x {m}   {t_np * 1e6:10.1f} us    (no numba)")
                continue
            t_nb = timeit(kernels.poisson_scores_jit, args, repeat)
            print(
                f"  {n_students:6d} x {m}   {t_np * 1e6:10.1f} us "
                f"{t_nb * 1e6:10.1f} us   {t_np / t_nb:7.2f}x"
            )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND}  (set {kernels.ENV_FLAG}=1 to force numpy)")
    print()
    bench_family_counts(args.repeat)
    print()
    bench_poisson_scores(args.repeat)


if __name__ == "__main__":
    main()
