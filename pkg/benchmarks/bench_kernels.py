"""Benchmark the JIT-compiled kernels against their pure-numpy twins.

Run with ``python3 benchmarks/bench_kernels.py``.  The same comparison with
the JIT path disabled package-wide is available by setting
``ME_SWARM_NO_NUMBA=1`` (both columns are then numpy).
"""

import time

import numpy as np

from meswarm import kernels


def bench(fn, args_list, repeats=5):
    """Best-of-repeats wall time for one pass over all argument sets."""
    fn(*args_list[0])            # warm up (JIT compile on first call)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for args in args_list:
            fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    n = 20000
    vecs = [(rng.standard_normal(3),) for _ in range(n)]
    small = [(1e-8 * rng.standard_normal(3),) for _ in range(n // 10)]
    mats = [(0.01 * rng.standard_normal((15, 15)),) for _ in range(n // 10)]

    cases = [
        ("skew", kernels.skew, kernels.skew_numpy, vecs),
        ("so3_exp", kernels.so3_exp, kernels.so3_exp_numpy, vecs),
        ("so3_exp (small angle)", kernels.so3_exp, kernels.so3_exp_numpy,
         small),
        ("so3_left_jacobian", kernels.so3_left_jacobian,
         kernels.so3_left_jacobian_numpy, vecs),
        ("expm 15x15", kernels.expm, kernels.expm_numpy, mats),
    ]

    label = "jit" if kernels.NUMBA_ENABLED else "numpy (jit disabled)"
    print(f"{'kernel':<22} {'calls':>7} {label:>12} {'numpy':>12} "
          f"{'speedup':>8}")
    for name, fast, plain, args_list in cases:
        # agreement check before timing
        for args in args_list[:50]:
            np.testing.assert_allclose(fast(*args), plain(*args),
                                       rtol=1e-12, atol=1e-14)
        t_fast = bench(fast, args_list)
        t_plain = bench(plain, args_list)
        print(f"{name:<22} {len(args_list):>7} {t_fast * 1e3:>10.2f}ms "
              f"{t_plain * 1e3:>10.2f}ms {t_plain / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
