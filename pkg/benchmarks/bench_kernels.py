"""Benchmark the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Covers the three hot loops (affine resampling, nearest-seed assignment,
connected-component labeling) at sizes representative of the pipeline:
patch rotation during augmentation, refinement of a patch and of a
recomposed image, and instance extraction.
"""

import argparse
import math
import time

import numpy as np

from bloomseg import _pykernels

try:
    from bloomseg import _native
except ImportError:
    _native = None


def timeit(fn, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_resample(impl, h, w):
    rng = np.random.default_rng(0)
    src = rng.random((h, w, 3))
    theta = 0.7
    c, s = math.cos(theta), math.sin(theta)
    return lambda: impl.resample_affine(src, None, c, -s, 3.0, s, c, -2.0, h, w, True)


def bench_nearest_seed(impl, n_pixels, n_seeds):
    rng = np.random.default_rng(1)
    colors = rng.random((n_pixels, 3))
    coords = rng.uniform(0, 500, (n_pixels, 2))
    scolors = rng.random((n_seeds, 3))
    scoords = rng.uniform(0, 500, (n_seeds, 2))
    return lambda: impl.nearest_seed(colors, coords, scolors, scoords, 5e-5)


def bench_ccl(impl, h, w):
    rng = np.random.default_rng(2)
    mask = rng.random((h, w)) < 0.5
    return lambda: impl.label_components(mask, 8)


CASES = [
    ("resample 512x512x3", lambda impl: bench_resample(impl, 512, 512)),
    ("nearest-seed 128x128 px, 64 seeds", lambda impl: bench_nearest_seed(impl, 128 * 128, 64)),
    ("nearest-seed 512x512 px, 256 seeds", lambda impl: bench_nearest_seed(impl, 512 * 512, 256)),
    ("label-components 1024x1024", lambda impl: bench_ccl(impl, 1024, 1024)),
]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    impls = [("python", _pykernels)]
    if _native is not None:
        impls.append(("native", _native))
    else:
        print("note: compiled extension not importable; timing fallback only")

    width = max(len(name) for name, _ in CASES)
    header = f"{'case':<{width}}" + "".join(f"  {n:>10}" for n, _ in impls)
    if len(impls) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, make in CASES:
        times = [timeit(make(impl), args.repeats) for _, impl in impls]
        row = f"{name:<{width}}" + "".join(f"  {t * 1e3:>8.1f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
