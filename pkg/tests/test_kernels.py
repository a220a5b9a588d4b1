"""Cross-checks between the compiled kernels and the numpy fallback.

When the extension is importable the two paths must agree bit for bit;
these tests are skipped on a pure-Python install.
"""

import math

import numpy as np
import pytest

from bloomseg import _pykernels

native = pytest.importorskip("bloomseg._native")


def _random_affine(rng):
    theta = rng.uniform(0, 2 * math.pi)
    c, s = math.cos(theta), math.sin(theta)
    tx, ty = rng.uniform(-3, 3, 2)
    return c, -s, tx, s, c, ty


@pytest.mark.parametrize("bilinear", [True, False])
def test_resample_affine_matches_fallback(rng, bilinear):
    for _ in range(25):
        h, w, nc = rng.integers(2, 40), rng.integers(2, 40), rng.integers(1, 4)
        src = rng.random((h, w, nc))
        src_valid = (rng.random((h, w)) < 0.8).astype(np.uint8)
        a, b, tx, c, d, ty = _random_affine(rng)
        oh, ow = int(rng.integers(2, 50)), int(rng.integers(2, 50))
        for sv in (None, src_valid):
            out_n, val_n = native.resample_affine(src, sv, a, b, tx, c, d, ty, oh, ow, bilinear)
            out_p, val_p = _pykernels.resample_affine(src, sv, a, b, tx, c, d, ty, oh, ow, bilinear)
            assert np.array_equal(out_n, out_p)
            assert np.array_equal(val_n, val_p)


def test_nearest_seed_matches_fallback(rng):
    for _ in range(25):
        n, ns, nc = int(rng.integers(1, 300)), int(rng.integers(1, 40)), int(rng.integers(1, 4))
        colors = rng.random((n, nc))
        coords = rng.uniform(0, 50, (n, 2))
        scolors = rng.random((ns, nc))
        scoords = rng.uniform(0, 50, (ns, 2))
        wsp = float(rng.uniform(0, 0.1))
        a = native.nearest_seed(colors, coords, scolors, scoords, wsp)
        b = _pykernels.nearest_seed(colors, coords, scolors, scoords, wsp)
        assert np.array_equal(a, b)


@pytest.mark.parametrize("connectivity", [4, 8])
def test_label_components_matches_fallback(rng, connectivity):
    # raw label ids differ; compare through the canonicalizing dispatcher
    import bloomseg.kernels as kmod

    for _ in range(50):
        h, w = int(rng.integers(1, 40)), int(rng.integers(1, 40))
        mask = rng.random((h, w)) < 0.5

        raw_n, cnt_n = native.label_components(mask, connectivity)
        raw_p, cnt_p = _pykernels.label_components(mask, connectivity)
        assert cnt_n == cnt_p

        canon_n = _canonical(kmod, raw_n, cnt_n, mask)
        canon_p = _canonical(kmod, raw_p, cnt_p, mask)
        assert np.array_equal(canon_n, canon_p)


def _canonical(kmod, raw, count, mask):
    # reuse the dispatcher's reorder by re-running it on the same mask with
    # the implementation pinned
    class _Pin:
        IMPLEMENTATION = "pinned"

        @staticmethod
        def label_components(m, conn):
            return raw, count

    orig = kmod._impl
    try:
        kmod._impl = _Pin
        out, n = kmod.label_components(mask, 4)
    finally:
        kmod._impl = orig
    assert n == count
    return out
