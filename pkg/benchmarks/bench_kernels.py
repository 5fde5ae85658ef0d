#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from aggnorm.kernels import pure

try:
    from aggnorm.kernels import _speedups
except ImportError:
    _speedups = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_lstm(backend, T, D, H, dtype, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(T, D)).astype(dtype)
    w_x = (rng.normal(size=(D, 4 * H)) * 0.3).astype(dtype)
    w_h = (rng.normal(size=(H, 4 * H)) * 0.3).astype(dtype)
    b = np.zeros(4 * H, dtype=dtype)
    h0 = np.zeros(H, dtype=dtype)
    c0 = np.zeros(H, dtype=dtype)
    dh = rng.normal(size=(T, H)).astype(dtype)
    fwd = timeit(lambda: backend.lstm_forward(x, w_x, w_h, b, h0, c0), repeats)
    _, cache = backend.lstm_forward(x, w_x, w_h, b, h0, c0)
    bwd = timeit(lambda: backend.lstm_backward(dh, cache), repeats)
    return fwd, bwd


def bench_charcnn(backend, C, Dc, W, F, dtype, repeats):
    rng = np.random.default_rng(0)
    chars = rng.normal(size=(C, Dc)).astype(dtype)
    filters = rng.normal(size=(W, Dc, F)).astype(dtype)
    dout = rng.normal(size=F).astype(dtype)
    fwd = timeit(lambda: backend.charcnn_forward(chars, filters), repeats)
    _, cache = backend.charcnn_forward(chars, filters)
    bwd = timeit(lambda: backend.charcnn_backward(dout, cache), repeats)
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    if _speedups is None:
        print("compiled kernels not built; run `python setup.py build_ext --inplace`")
        return

    print(f"{'kernel':<28}{'pure (us)':>12}{'compiled (us)':>15}{'speedup':>10}")
    for dtype in (np.float32, np.float64):
        tag = np.dtype(dtype).name
        for T, D, H in ((16, 128, 32), (64, 128, 32)):
            p_f, p_b = bench_lstm(pure, T, D, H, dtype, args.repeats)
            c_f, c_b = bench_lstm(_speedups, T, D, H, dtype, args.repeats)
            print(f"lstm fwd {tag} T={T:<4}{p_f * 1e6:>14.1f}{c_f * 1e6:>15.1f}"
                  f"{p_f / c_f:>9.1f}x")
            print(f"lstm bwd {tag} T={T:<4}{p_b * 1e6:>14.1f}{c_b * 1e6:>15.1f}"
                  f"{p_b / c_b:>9.1f}x")
        for C in (4, 12):
            p_f, p_b = bench_charcnn(pure, C, 16, 3, 32, dtype, args.repeats)
            c_f, c_b = bench_charcnn(_speedups, C, 16, 3, 32, dtype, args.repeats)
            print(f"charcnn fwd {tag} C={C:<2}{p_f * 1e6:>13.1f}{c_f * 1e6:>15.1f}"
                  f"{p_f / c_f:>9.1f}x")
            print(f"charcnn bwd {tag} C={C:<2}{p_b * 1e6:>13.1f}{c_b * 1e6:>15.1f}"
                  f"{p_b / c_b:>9.1f}x")


if __name__ == "__main__":
    main()
