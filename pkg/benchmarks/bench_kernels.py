"""Time the compiled and numpy KNN kernels on the same random banks.

    python3 benchmarks/bench_kernels.py --queries 2000 --bank 1200 --dim 64 --k 5
"""

import argparse
import timeit

import numpy as np

from taxozsl import kernels


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--queries", type=int, default=2000)
    ap.add_argument("--bank", type=int, default=1200)
    ap.add_argument("--classes", type=int, default=20)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    queries = rng.normal(size=(args.queries, args.dim))
    bank = rng.normal(size=(args.bank, args.dim))
    bank_cls = np.sort(rng.integers(0, args.classes, args.bank)).astype(np.int64)

    available = list(kernels.backends())
    print(f"backends: {', '.join(available)} (default {kernels.BACKEND})")
    ref = None
    timings = {}
    for impl in available:
        def run():
            return kernels.knn_query(queries, bank, bank_cls, args.classes, args.k, impl=impl)

        out = run()
        if ref is None:
            ref = out
        else:
            same = all(np.array_equal(a, b) if a.dtype.kind == "i" else np.allclose(a, b)
                       for a, b in zip(ref, out))
            print(f"{impl} agrees with {available[0]}: {same}")
        best = min(timeit.repeat(run, number=1, repeat=args.repeat))
        timings[impl] = best
        print(f"{impl:>8}: {best * 1e3:9.2f} ms  "
              f"({args.queries} queries x {args.bank} bank rows, dim {args.dim}, k {args.k})")
    if len(timings) == 2:
        print(f"speedup cython/python: {timings['python'] / timings['cython']:.2f}x")


if __name__ == "__main__":
    main()
