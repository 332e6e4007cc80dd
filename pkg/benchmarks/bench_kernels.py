#!/usr/bin/env python3
"""Timing comparison of the compiled kernel core against the numpy fallback.

Run after `pip install -e .`:

    python3 benchmarks/bench_kernels.py [--repeats 5]

Shapes mimic the real hot paths: dense per-pixel distance fields for
keypoint decoding (a 96x128 map against 80 prototypes) and the Manhattan
similarity backprop used inside every training step.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from kgedet._kernels import _pykernels

try:
    from kgedet._kernels import _core
except ImportError:
    _core = None


def best_of(repeats, fn, *args):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    pixels = np.ascontiguousarray(rng.standard_normal((96 * 128, 64)))
    prototypes = np.ascontiguousarray(rng.standard_normal((80, 64)))
    weights = np.ascontiguousarray(rng.standard_normal((96 * 128, 80)))
    field = np.ascontiguousarray(rng.standard_normal((96, 128)))

    cases = [
        ("manhattan_distances (12288x80, d=64)", "manhattan_distances", (pixels, prototypes)),
        ("lk_distances k=2", "lk_distances", (pixels, prototypes, 2.0)),
        ("lk_distances k=3", "lk_distances", (pixels, prototypes, 3.0)),
        ("weighted_sign_sum", "weighted_sign_sum", (pixels, prototypes, weights)),
        ("local_minima8 (96x128)", "local_minima8", (field, 0.0)),
    ]

    print(f"{'kernel':40s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for label, name, call_args in cases:
        py = best_of(args.repeats, getattr(_pykernels, name), *call_args)
        if _core is None:
            print(f"{label:40s} {py * 1e3:9.2f}ms {'n/a':>10s} {'':>8s}")
            continue
        cy = best_of(args.repeats, getattr(_core, name), *call_args)
        print(f"{label:40s} {py * 1e3:9.2f}ms {cy * 1e3:9.2f}ms {py / cy:7.1f}x")
    if _core is None:
        print("\ncompiled core unavailable; built with `pip install -e .`")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
