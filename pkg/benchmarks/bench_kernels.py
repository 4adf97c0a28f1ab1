"""Compare the numba and pure-numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from impact import _accel, kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_jacobi(d, use_numba, repeat, rng):
    m = rng.standard_normal((d, d))
    a = m + m.T
    tol = 1e-12 * np.linalg.norm(a)
    return best_of(lambda: kernels.jacobi_sweeps(a.copy(), tol, 100, use_numba=use_numba), repeat)


def bench_moments(d, n, use_numba, repeat, rng):
    ys, gs, xn = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.uniform(0, 1, n)

    def run():
        kernels.accumulate_moments(np.zeros((d, d)), np.zeros(d), np.zeros(d), np.zeros(d),
                                   ys, gs, xn, use_numba=use_numba)
    return best_of(run, repeat)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    # warm the JIT so compilation is not timed
    bench_jacobi(4, True, 1, rng)
    bench_moments(4, 4, True, 1, rng)

    print(f"{'kernel':<28}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    cases = [(f"jacobi d={d}", lambda u, d=d: bench_jacobi(d, u, args.repeat, rng)) for d in (16, 32, 64)]
    cases += [(f"moments d={d} n={n}", lambda u, d=d, n=n: bench_moments(d, n, u, args.repeat, rng))
              for d, n in ((16, 10_000), (32, 10_000), (64, 5_000))]
    for name, fn in cases:
        fast, slow = fn(True), fn(False)
        print(f"{name:<28}{fast:>12.5f}{slow:>12.5f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
