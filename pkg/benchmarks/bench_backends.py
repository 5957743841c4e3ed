"""Compare the compiled and pure-Python kernel backends.

Times the three hot kernels (banded matvec, one Haar split, one Haar merge)
and a full banded non-standard-form apply on each available backend, and
checks that the backends agree. Prints CSV to stdout.

    python3 benchmarks/bench_backends.py --sizes 1024 4096 16384 --band 8
"""
import argparse
import sys
import timeit

import numpy as np

from haarbcr import _backend
from haarbcr.banded import BandMatrix, half_width
from haarbcr.dyadic import GridSpec
from haarbcr.fastapply import ApplyPlan
from haarbcr.kernels import kernel_registry_get, operator_matrix
from haarbcr.nsform import pyramid_from_matrix


def best_of(fn, repeats, number):
    return min(timeit.repeat(fn, repeat=repeats, number=number)) / number


def kernel_cases(n, band, rng):
    w = half_width(band)
    data = rng.standard_normal((n, 2 * w + 1))
    x = rng.standard_normal(n)
    out = np.zeros(n)
    s = rng.standard_normal(n)
    coarse, detail = np.empty(n // 2), np.empty(n // 2)
    merged = np.empty(n)

    def matvec():
        out[:] = 0.0
        _backend.band_matvec(data, w, x, out)
        return out.copy()

    def split_():
        _backend.haar_split(s, coarse, detail)
        return np.concatenate([coarse, detail])

    def merge():
        _backend.haar_merge(coarse, detail, merged)
        return merged.copy()

    return {"band_matvec": matvec, "haar_split": split_, "haar_merge": merge}


def apply_case(N, band, M=2):
    J = int(np.log2(N // M))
    grid = GridSpec(M, J)
    k = kernel_registry_get("truncated-hilbert", grid=grid)
    plan = ApplyPlan.from_form(pyramid_from_matrix(grid, operator_matrix(k, grid), band=band))
    f = np.random.default_rng(1).standard_normal(grid.N)
    return lambda: plan.apply_values(f)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1024, 4096, 16384])
    ap.add_argument("--band", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only", file=sys.stderr)
    rng = np.random.default_rng(0)
    print("N,case," + ",".join(f"{b}-seconds" for b in backends) + ",speedup,max-abs-diff")
    previous = _backend.active()
    try:
        for N in args.sizes:
            cases = kernel_cases(N, args.band, rng)
            cases["full_apply"] = apply_case(N, args.band)
            for name, fn in cases.items():
                seconds, results = [], []
                for b in backends:
                    _backend.use(b)
                    results.append(fn())
                    number = max(1, int(2e5 // N)) if name != "full_apply" else 3
                    seconds.append(best_of(fn, args.repeats, number))
                diff = max(float(np.abs(r - results[0]).max()) for r in results)
                speed = seconds[-1] and seconds[backends.index("python")] / seconds[0]
                print(f"{N},{name}," + ",".join(f"{t:.3e}" for t in seconds)
                      + f",{speed:.2f},{diff:.1e}")
    finally:
        _backend.use(previous)


if __name__ == "__main__":
    main()
