"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set BLOOMSEG_FORCE_FALLBACK=1 to ignore the extension (used by the
benchmark and the cross-implementation tests). `IMPLEMENTATION` reports
which path is active.
"""

import os

import numpy as np

from bloomseg import _pykernels

if os.environ.get("BLOOMSEG_FORCE_FALLBACK"):
    _impl = _pykernels
else:
    try:
        from bloomseg import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

IMPLEMENTATION: str = _impl.IMPLEMENTATION

resample_affine = _impl.resample_affine
nearest_seed = _impl.nearest_seed


def label_components(mask, connectivity: int = 8):
    """Connected foreground components with canonical label numbering.

    Returns (labels int32 (H, W), count) where 0 is background and labels
    1..count are ordered by each component's (min row, min col, first
    raster-scan pixel). The ordering depends only on the pixel sets, so
    both kernel implementations agree exactly.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    raw, count = _impl.label_components(mask, connectivity)
    if count == 0:
        return raw, 0

    h, w = raw.shape
    ys, xs = np.nonzero(raw)
    lab = raw[ys, xs]
    big = np.iinfo(np.int64).max
    ymin = np.full(count + 1, big, dtype=np.int64)
    xmin = np.full(count + 1, big, dtype=np.int64)
    rmin = np.full(count + 1, big, dtype=np.int64)
    np.minimum.at(ymin, lab, ys)
    np.minimum.at(xmin, lab, xs)
    np.minimum.at(rmin, lab, ys.astype(np.int64) * w + xs)

    order = np.lexsort((rmin[1:], xmin[1:], ymin[1:]))
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    return remap[raw], count
