#!/usr/bin/env python3
"""Benchmark the jitted path kernels against the pure-numpy fallback.

Runs the bundled scenarios on both backends at a configurable path count,
reports wall time, paths/second, and the worst cross-backend deviation of
the discounted prices (expected at floating-point rounding level).

    python benchmarks/bench_backends.py --paths 20000 --threads 4
"""

import argparse
import time

import numpy as np

from levyhjm import engine, scenario


def bench(name: str, n_paths: int, threads: int, repeats: int) -> None:
    scn = scenario.load_bundled(name)
    tab = scn.tables()
    rows = {}
    for backend in ("numba", "numpy"):
        try:
            # warm the jit cache outside the timed region
            engine.run(tab, min(256, n_paths), threads=1, backend=backend)
        except RuntimeError as exc:
            print(f"{name:14s} {backend:6s} unavailable: {exc}")
            continue
        best = np.inf
        res = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            res = engine.run(tab, n_paths, threads=threads, backend=backend,
                             chunk_size=scn.chunk_size)
            best = min(best, time.perf_counter() - t0)
        rows[backend] = (best, res)
        print(f"{name:14s} {backend:6s} {best:8.3f}s  "
              f"{n_paths / best:10.0f} paths/s")
    if len(rows) == 2:
        d = np.abs(rows["numba"][1].dhat - rows["numpy"][1].dhat).max()
        speedup = rows["numpy"][0] / rows["numba"][0]
        print(f"{name:14s} agree to {d:.2e}; numba speedup x{speedup:.1f}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--scenarios", nargs="*", default=list(scenario.BUNDLED))
    args = ap.parse_args()
    for name in args.scenarios:
        bench(name, args.paths, args.threads, args.repeats)


if __name__ == "__main__":
    main()
