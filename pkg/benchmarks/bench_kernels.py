#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Run: python benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import time

import numpy as np

from slicereg._kernels import _fallback

try:
    from slicereg._kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats):
    fn()  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    vol = rng.random((128, 128, 128), dtype=np.float32)
    img = rng.random((512, 512), dtype=np.float32)
    a = rng.random((256, 256), dtype=np.float32)
    b = rng.random((256, 256), dtype=np.float32)
    g = rng.random((256, 256), dtype=np.float32)
    n = 2_000_000
    xs = rng.uniform(0, 127, n)
    ys = rng.uniform(0, 127, n)
    zs = rng.uniform(0, 127, n)
    xi = rng.uniform(0, 511, 1_000_000)
    yi = rng.uniform(0, 511, 1_000_000)
    return [
        ("trilinear 2M pts / 128^3", lambda impl: impl.sample_trilinear(vol, xs, ys, zs)),
        ("bilinear 1M pts / 512^2", lambda impl: impl.sample_bilinear(img, xi, yi)),
        ("lncc 256^2 r=4", lambda impl: impl.lncc(a, b, 4, 1e-8)),
        ("lc2 256^2 r=3", lambda impl: impl.lc2(a, g, b, 3, 1e-8)),
    ]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    rows = []
    for name, call in cases(rng):
        t_np = timeit(lambda: call(_fallback), args.repeats)
        if _core is not None:
            t_cy = timeit(lambda: call(_core), args.repeats)
            rows.append((name, t_np, t_cy, t_np / t_cy))
        else:
            rows.append((name, t_np, None, None))

    header = f"{'kernel':<28}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, t_np, t_cy, ratio in rows:
        if t_cy is None:
            print(f"{name:<28}{t_np * 1e3:>12.2f}{'n/a':>13}{'n/a':>9}")
        else:
            print(f"{name:<28}{t_np * 1e3:>12.2f}{t_cy * 1e3:>13.2f}{ratio:>8.1f}x")
    if _core is None:
        print("\ncompiled backend unavailable; install with a C compiler to compare")


if __name__ == "__main__":
    main()
