"""Benchmark: compiled kernels vs the NumPy fallback.

Times the operations that dominate training and feature extraction: the
small-CNN convolution forward/backward and 2x2 max pooling, at the real
224-input layer shapes and at desk scale.

Run:  python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from safer.kernels import available_backends

CASES = [
    # (name, H, W, Cin, Cout)
    ("layer1 224x224x3 -> 32", 224, 224, 3, 32),
    ("layer2 111x111x32 -> 64", 111, 111, 32, 64),
    ("layer3 55x55x64 -> 128", 55, 55, 64, 128),
    ("desk 16x16x3 -> 8", 16, 16, 3, 8),
]


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3,
                        help="repetitions per measurement (best-of)")
    args = parser.parse_args()

    backends = available_backends()
    print(f"backends available: {', '.join(sorted(backends))}")
    if len(backends) < 2:
        print("compiled extension not built; run `python setup.py build_ext "
              "--inplace` to compare")

    rng = np.random.default_rng(0)
    header = f"{'case':<28} {'op':<10}" + "".join(f"{n:>12}" for n in sorted(backends))
    print(header)
    print("-" * len(header))
    for name, h, w, cin, cout in CASES:
        x = rng.normal(size=(h, w, cin))
        wt = rng.normal(size=(2, 2, cin, cout))
        b = rng.normal(size=cout)
        dy = rng.normal(size=(h - 1, w - 1, cout))

        rows = {
            "conv fwd": {n: time_call(lambda k=k: k.conv2d_valid(x, wt, b), args.repeats)
                         for n, k in backends.items()},
            "conv bwd": {n: time_call(lambda k=k: k.conv2d_valid_bwd(x, wt, dy),
                                      args.repeats)
                         for n, k in backends.items()},
            "pool fwd": {n: time_call(lambda k=k: k.maxpool2(x), args.repeats)
                         for n, k in backends.items()},
        }
        for op, times in rows.items():
            cells = "".join(f"{times[n] * 1e3:>10.2f}ms" for n in sorted(backends))
            print(f"{name:<28} {op:<10}{cells}")
    print()
    print("Selection at import: compiled when built, else NumPy; override with "
          "SAFER_KERNELS=native|numpy.")


if __name__ == "__main__":
    main()
