"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--size 96] [--repeat 3]

Prints the best-of-N wall time per kernel and backend, the speed-up, and the
max abs difference between backends.
"""
import argparse
import time

import numpy as np

from nativesr import _pykernels, kernels
from nativesr.resample import BSPLINE_HORIZON, BSPLINE_POLE, _area_band, _cubic_band, _linear_band


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n):
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(n * n, n))
    vol = rng.normal(size=(n, n, n))
    lin = _linear_band(n, 1.0, 2 * n, 0.5)
    cub = _cubic_band(n, 1.0, 2 * n, 0.5)
    area = _area_band(n, 1.0, int(n / 2.7), 2.7)
    padded = np.pad(rows, ((0, 0), (2, 2)), mode="reflect")
    return [
        ("banded trilinear x2", lambda m: m.banded_lastaxis(rows, *lin)),
        ("banded cubic x2", lambda m: m.banded_lastaxis(padded, *cub)),
        ("banded area /2.7", lambda m: m.banded_lastaxis(rows, *area)),
        ("bspline prefilter", lambda m: m.bspline_prefilter_lastaxis(rows, BSPLINE_POLE, BSPLINE_HORIZON)),
        ("laplacian 7-point", lambda m: m.laplacian7(vol)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=96, help="edge length n (rows are n*n lines of n samples)")
    ap.add_argument("--repeat", type=int, default=3, help="timing repetitions (best is reported)")
    args = ap.parse_args()
    if "cython" not in kernels.available_backends():
        print("compiled backend not built; only the Python backend is available")
        return
    from nativesr import _ckernels

    print(f"n={args.size}  (default backend: {kernels.BACKEND})")
    print(f"{'kernel':<22}{'cython s':>10}{'python s':>10}{'speed-up':>10}{'max|diff|':>12}")
    for name, fn in cases(args.size):
        tc, oc = best_of(lambda: fn(_ckernels), args.repeat)
        tp, op = best_of(lambda: fn(_pykernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(oc) - np.asarray(op))))
        print(f"{name:<22}{tc:>10.4f}{tp:>10.4f}{tp / tc:>9.1f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
