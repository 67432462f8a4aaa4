"""Time the compiled symbol kernels against the numpy fallback.

Usage: ``python benchmarks/bench_kernels.py [--sizes 64,128,256,512] [--repeat 5]``.
Prints one line per (kernel, N) with the best wall time of each backend, the
speed-up and the largest absolute difference between the two results.
"""
import argparse
import timeit

import numpy as np

from gevrey_kdv import _kernels_py

try:
    from gevrey_kdv import _kernels
except ImportError:
    _kernels = None


def bench(sizes, repeat, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        p = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        _kernels_py.symbol_apply(p, v)  # warm the phase cache
        for name in ("symbol_apply", "reverse_coeffs"):
            py = getattr(_kernels_py, name)
            t_py = min(timeit.repeat(lambda: py(p, v), number=1, repeat=repeat))
            if _kernels is None:
                rows.append((name, n, t_py, float("nan"), float("nan")))
                continue
            cy = getattr(_kernels, name)
            t_cy = min(timeit.repeat(lambda: cy(p, v), number=1, repeat=repeat))
            diff = float(np.max(np.abs(cy(p, v) - py(p, v))))
            rows.append((name, n, t_py, t_cy, diff))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="64,128,256,512")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<16}{'N':>6}{'numpy [ms]':>13}{'cython [ms]':>13}{'speed-up':>10}{'max diff':>11}")
    for name, n, t_py, t_cy, diff in bench(sizes, args.repeat):
        print(f"{name:<16}{n:>6}{1e3 * t_py:>13.3f}{1e3 * t_cy:>13.3f}{t_py / t_cy:>10.2f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
