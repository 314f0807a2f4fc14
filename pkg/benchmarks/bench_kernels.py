"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--points 16384] [--k 25] [--reps 5]
"""

import argparse
import statistics
import time

import numpy as np

from lsnet import _pykernels

try:
    from lsnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def timed(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=16384)
    ap.add_argument("--k", type=int, default=25)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 5, size=(args.points, 3))
    index = rng.integers(0, args.points, size=args.points * args.k)
    src = rng.normal(size=(index.size, args.dim)).astype(np.float32)

    backends = [("python", _pykernels)] + ([("compiled", _ckernels)] if _ckernels else [])
    print("backend,kernel,median_ms")
    results = {}
    for name, mod in backends:
        build = timed(lambda: mod.KDTree(pts), args.reps)
        tree = mod.KDTree(pts)
        query = timed(lambda: tree.query(pts, args.k), args.reps)
        out = np.zeros((args.points, args.dim), dtype=np.float32)
        scatter = timed(lambda: mod.scatter_add_rows(out, index, src), args.reps)
        results[name] = (build + query, scatter)
        print(f"{name},kdtree_build,{build:.1f}")
        print(f"{name},knn_query,{query:.1f}")
        print(f"{name},scatter_add_rows,{scatter:.1f}")
    if len(results) == 2:
        (pk, ps), (ck, cs) = results["python"], results["compiled"]
        print(f"# speedup knn {pk / ck:.1f}x, scatter {ps / cs:.1f}x")


if __name__ == "__main__":
    main()
