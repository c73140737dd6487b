"""Benchmark the compiled box kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 10,100,1000] [--repeat 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from alod import _kernels_py, kernels


def random_boxes(rng, n, span=1000.0):
    corners = rng.uniform(0, span, (n, 2))
    sizes = rng.uniform(5.0, span / 4, (n, 2))
    return np.hstack([corners, corners + sizes])


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="10,100,1000")
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if kernels.BACKEND != "compiled":
        print("note: compiled extension unavailable, comparing numpy against itself")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'n':>6} {'numpy':>12} {'compiled':>12} {'speedup':>8}")
    for n in sizes:
        boxes = random_boxes(rng, n)
        scores = rng.uniform(0, 1, n)
        gts = random_boxes(rng, max(1, n // 3))
        repeat = max(3, args.repeat // max(1, n // 10))
        cases = {
            "nms_keep": (
                lambda: _kernels_py.nms_keep(boxes, scores, 0.5),
                lambda: kernels.nms_keep(boxes, scores, 0.5),
            ),
            "iou_matrix": (
                lambda: _kernels_py.iou_matrix(boxes, gts),
                lambda: kernels.iou_matrix(boxes, gts),
            ),
            "greedy_match": (
                lambda: _kernels_py.greedy_match(boxes, gts, 0.5),
                lambda: kernels.greedy_match(boxes, gts, 0.5),
            ),
        }
        for name, (py_fn, fast_fn) in cases.items():
            assert np.array_equal(np.asarray(py_fn()), np.asarray(fast_fn()))
            t_py = timeit(py_fn, repeat)
            t_fast = timeit(fast_fn, repeat)
            print(
                f"{name:<14} {n:>6} {t_py * 1e6:>10.1f}us {t_fast * 1e6:>10.1f}us "
                f"{t_py / t_fast:>7.1f}x"
            )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
