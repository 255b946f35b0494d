#!/usr/bin/env python3
"""Compare the compiled kernel backend against the numpy fallback.

Times the conv im2col/col2im primitives, max pooling, and a full Conv2d
forward+backward at training-typical shapes, and verifies the two backends
agree bit-for-bit. Run:

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from orchard import kernels
from orchard.layers import Conv2d

CASES = [
    # (label, N, C, H, W, Cout, k, stride)
    ("stem 64x64", 32, 3, 64, 64, 16, 3, 2),
    ("block 16x16", 32, 16, 16, 16, 32, 3, 1),
    ("wide 8x8", 32, 32, 8, 8, 32, 5, 1),
]


def time_fn(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_primitives(impl, x, k, stride, repeats):
    n, c, h, w = x.shape
    cols = impl.im2col(x, k, k, stride, stride)
    t_im2col = time_fn(lambda: impl.im2col(x, k, k, stride, stride), repeats)
    t_col2im = time_fn(lambda: impl.col2im(cols, c, h, w, k, k, stride, stride), repeats)
    out, argmax = impl.maxpool_forward(x, 2, 2)
    t_pool = time_fn(lambda: impl.maxpool_forward(x, 2, 2), repeats)
    return t_im2col, t_col2im, t_pool


def bench_conv_layer(x, cout, k, stride, repeats):
    conv = Conv2d(x.shape[1], cout, k, stride=stride, padding=k // 2)
    rng = np.random.default_rng(0)
    conv.params["weight"][...] = rng.standard_normal(conv.params["weight"].shape) * 0.1
    out = conv.forward(x)
    grad = rng.standard_normal(out.shape).astype(np.float32)

    def step():
        conv.forward(x)
        conv.backward(grad)

    return time_fn(step, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    backends = kernels.get_backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled backend not built; nothing to compare")
        return

    rng = np.random.default_rng(7)
    header = f"{'case':<14} {'primitive':<10}" + "".join(f"{name:>12}" for name in backends)
    print(header + f"{'speedup':>10}")
    for label, n, c, h, w, cout, k, stride in CASES:
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)

        # agreement check before timing
        ref = None
        for name, impl in backends.items():
            cols = impl.im2col(x, k, k, stride, stride)
            back = impl.col2im(cols, c, h, w, k, k, stride, stride)
            pool = impl.maxpool_forward(x, 2, 2)
            if ref is None:
                ref = (cols, back, pool)
            else:
                assert np.array_equal(ref[0], cols), f"{label}: im2col mismatch"
                assert np.array_equal(ref[1], back), f"{label}: col2im mismatch"
                assert np.array_equal(ref[2][0], pool[0]), f"{label}: maxpool mismatch"

        rows = {}
        for name, impl in backends.items():
            rows[name] = bench_primitives(impl, x, k, stride, args.repeats)
        for pi, prim in enumerate(("im2col", "col2im", "maxpool")):
            cells = "".join(f"{rows[name][pi] * 1e3:>10.3f}ms" for name in backends)
            ratio = rows["python"][pi] / rows["compiled"][pi]
            print(f"{label:<14} {prim:<10}{cells}{ratio:>9.2f}x")

    print()
    print("full Conv2d forward+backward (active backend per ORCHARD_KERNELS):")
    for label, n, c, h, w, cout, k, stride in CASES:
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        t = bench_conv_layer(x, cout, k, stride, args.repeats)
        print(f"  {label:<14} {t * 1e3:8.3f} ms/iter")
    print("(rerun with ORCHARD_KERNELS=python to time the fallback end to end)")


if __name__ == "__main__":
    main()
