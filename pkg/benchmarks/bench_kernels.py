"""Benchmark the numba-compiled kernels against the pure-numpy fallback.

Usage:  python benchmarks/bench_kernels.py [--repeats 5]

The same comparison drives the env-flag fallback: setting
DRESPLIT_PURE_NUMPY=1 makes the library use the numpy path everywhere.
"""

import argparse
import time

import numpy as np

from dresplit import _kernels


def _time(fn, *args, repeats):
    fn(*args)  # warm up (and JIT-compile)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_rk4(n, n_steps, repeats):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((n, n))
    g = rng.standard_normal((n, 4))
    q = g @ g.T
    s_half = rng.standard_normal((n, 4))
    s = s_half @ s_half.T
    p0 = q.copy()
    args = tuple(_kernels.as_kernel_array(x) for x in (a.T, a, q, s, p0)) + (1e-4, n_steps)
    rows = []
    base = _time(_kernels.dre_rk4_steps_numpy, *args, repeats=repeats)
    rows.append(("numpy", base))
    if _kernels.dre_rk4_steps_numba is not None:
        jit = _time(_kernels.dre_rk4_steps_numba, *args, repeats=repeats)
        rows.append(("numba", jit))
    return rows


def bench_repeat_apply(n, m, n_steps, repeats):
    rng = np.random.default_rng(0)
    k = rng.standard_normal((n, n)) * (0.5 / np.sqrt(n))
    v = rng.standard_normal((n, m))
    args = (_kernels.as_kernel_array(k), _kernels.as_kernel_array(v), n_steps)
    rows = [("numpy", _time(_kernels.repeat_apply_numpy, *args, repeats=repeats))]
    if _kernels.repeat_apply_numba is not None:
        rows.append(("numba", _time(_kernels.repeat_apply_numba, *args, repeats=repeats)))
    return rows


def _print_table(title, rows):
    print(f"\n{title}")
    base = rows[0][1]
    for name, seconds in rows:
        print(f"  {name:>6}: {seconds * 1e3:9.3f} ms   speedup x{base / seconds:5.2f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    print(f"numba path available: {_kernels.dre_rk4_steps_numba is not None}")
    print(f"library currently uses: {'numba' if _kernels.USE_NUMBA else 'numpy'}")

    for n, steps in ((10, 20000), (32, 5000)):
        _print_table(
            f"dense matrix-ODE RK4 reference, N={n}, {steps} steps",
            bench_rk4(n, steps, args.repeats),
        )
    for n, m, steps in ((10, 12, 5000), (32, 16, 2000)):
        _print_table(
            f"propagator application, N={n}, block width {m}, {steps} substeps",
            bench_repeat_apply(n, m, steps, args.repeats),
        )


if __name__ == "__main__":
    main()
