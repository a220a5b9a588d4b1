"""Pure-numpy implementations of the hot kernels.

These are the fallback used when the compiled extension (bloomseg._native)
is unavailable. Both implementations are kept arithmetically identical
(same operation order, no FMA contraction on the C side) so results are
bit-for-bit equal; tests assert this whenever both are importable.

Kernel contracts are documented here once; the extension mirrors them.
"""

import numpy as np
from scipy import ndimage

IMPLEMENTATION = "python"


def resample_affine(src, src_valid, a, b, tx, c, d, ty, out_h, out_w, bilinear):
    """Sample `src` at affine-mapped output coordinates.

    For output pixel (row yo, col xo) the source coordinate is
        xs = a*xo + b*yo + tx,   ys = c*xo + d*yo + ty.
    Coordinates outside [0, W-1] x [0, H-1] yield value 0 and validity
    False. Bilinear mode blends the (up to) 4 surrounding pixels; a tap
    only counts toward validity when its weight is nonzero. `src_valid`
    (uint8, same H x W as src) marks source pixels that may be sampled;
    pass None to treat every source pixel as valid.

    Returns (out float64 (out_h, out_w, C), valid bool (out_h, out_w)).
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    h, w = src.shape[0], src.shape[1]
    nc = src.shape[2]

    xo, yo = np.meshgrid(
        np.arange(out_w, dtype=np.float64),
        np.arange(out_h, dtype=np.float64),
    )
    xs = a * xo + b * yo + tx
    ys = c * xo + d * yo + ty

    in_range = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)

    out = np.zeros((out_h, out_w, nc), dtype=np.float64)

    if bilinear:
        x0 = np.floor(xs)
        y0 = np.floor(ys)
        fx = xs - x0
        fy = ys - y0
        x0i = np.clip(x0.astype(np.int64), 0, w - 1)
        y0i = np.clip(y0.astype(np.int64), 0, h - 1)
        x1i = np.clip(x0i + 1, 0, w - 1)
        y1i = np.clip(y0i + 1, 0, h - 1)

        gx = 1.0 - fx
        gy = 1.0 - fy
        w00 = gx * gy
        w01 = fx * gy
        w10 = gx * fy
        w11 = fx * fy

        v00 = src[y0i, x0i]
        v01 = src[y0i, x1i]
        v10 = src[y1i, x0i]
        v11 = src[y1i, x1i]
        val = (
            v00 * w00[..., None]
            + v01 * w01[..., None]
            + v10 * w10[..., None]
            + v11 * w11[..., None]
        )
        out[in_range] = val[in_range]

        valid = in_range.copy()
        if src_valid is not None:
            sv = np.ascontiguousarray(src_valid, dtype=np.uint8)
            for wt, yi, xi in ((w00, y0i, x0i), (w01, y0i, x1i),
                               (w10, y1i, x0i), (w11, y1i, x1i)):
                valid &= (wt <= 0.0) | (sv[yi, xi] != 0)
    else:
        xn = np.clip(np.floor(xs + 0.5).astype(np.int64), 0, w - 1)
        yn = np.clip(np.floor(ys + 0.5).astype(np.int64), 0, h - 1)
        val = src[yn, xn]
        out[in_range] = val[in_range]
        valid = in_range.copy()
        if src_valid is not None:
            sv = np.ascontiguousarray(src_valid, dtype=np.uint8)
            valid &= sv[yn, xn] != 0

    return out, valid


def nearest_seed(colors, coords, seed_colors, seed_coords, wsp):
    """Index of the nearest seed per pixel under the joint distance
    D = sum((color - seed_color)^2) + wsp * ((dx)^2 + (dy)^2).

    colors (P, C) / coords (P, 2) float64; seeds likewise (S, ...).
    Ties go to the lowest seed index. Returns int64 (P,).
    """
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    seed_colors = np.ascontiguousarray(seed_colors, dtype=np.float64)
    seed_coords = np.ascontiguousarray(seed_coords, dtype=np.float64)

    n = colors.shape[0]
    out = np.empty(n, dtype=np.int64)
    # Chunk over pixels to bound the (chunk, seeds) scratch arrays.
    chunk = max(1, int(4_000_000 // max(1, seed_colors.shape[0])))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        dc = colors[lo:hi, None, :] - seed_colors[None, :, :]
        cd2 = dc[..., 0] * dc[..., 0]
        for k in range(1, dc.shape[2]):
            cd2 = cd2 + dc[..., k] * dc[..., k]
        dxy = coords[lo:hi, None, :] - seed_coords[None, :, :]
        sd2 = dxy[..., 0] * dxy[..., 0] + dxy[..., 1] * dxy[..., 1]
        dist = cd2 + wsp * sd2
        out[lo:hi] = np.argmin(dist, axis=1)
    return out


_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)
_STRUCT8 = np.ones((3, 3), dtype=np.uint8)


def label_components(mask, connectivity):
    """Label connected foreground components (arbitrary positive ids).

    Returns (labels int32 (H, W) with 0 = background, count). Label
    numbering is implementation-defined; callers wanting a canonical
    order go through bloomseg.kernels.label_components.
    """
    mask = np.asarray(mask, dtype=bool)
    structure = _STRUCT8 if connectivity == 8 else _STRUCT4
    labels, count = ndimage.label(mask, structure=structure)
    return labels.astype(np.int32), int(count)
