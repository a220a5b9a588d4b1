"""Sliding-window decomposition of a full image and its inverse recomposition.

A window factor K splits an (M, N) image into patches of floor(M/K) x
floor(N/K) pixels with half-patch stride, giving (2K-1)^2 overlapping
windows. Recomposition averages per-pixel class probabilities over every
window covering the pixel (soft voting); a strict hard-vote mode exists
for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bloomseg.errors import DataError
from bloomseg.raster import PROBS, Raster, ScoreMap


@dataclass(frozen=True)
class WindowGrid:
    image_size: tuple[int, int]   # (M rows, N cols)
    window_factor: int
    patch_size: tuple[int, int]   # (m, n)
    stride: tuple[int, int]       # (p, q)
    origins: tuple[tuple[int, int], ...]  # row-major (row, col) top-left corners

    @property
    def count(self) -> int:
        return len(self.origins)


def plan_grid(image_size: tuple[int, int], k: int) -> WindowGrid:
    """Deterministic window layout for an (M, N) image and factor K.

    Origins are row-major at multiples of the stride; the last window row
    and column are clamped to the image boundary when M or N is not a
    multiple of K, so every patch keeps the full (m, n) size.
    """
    m_rows, n_cols = int(image_size[0]), int(image_size[1])
    if k < 1:
        raise DataError(f"window factor must be >= 1, got {k}", "tiling")
    m = m_rows // k
    n = n_cols // k
    if m < 2 or n < 2:
        raise DataError(
            f"degenerate patch size ({m}, {n}) for image {image_size} and K={k}; "
            "patches need at least 2 px per side",
            "tiling",
        )
    p = math.ceil(m / 2)
    q = math.ceil(n / 2)
    side = 2 * k - 1

    def axis_origins(extent: int, patch: int, stride: int) -> list[int]:
        # windows at stride multiples; the last one sits on the boundary
        # (which is the natural position whenever extent is a multiple of
        # patch), overshoots in between are clamped to it
        out = [min(w * stride, extent - patch) for w in range(side - 1)]
        out.append(extent - patch)
        if side >= 2 and out[-2] + patch < out[-1]:
            raise DataError(
                f"image extent {extent} leaves a coverage gap for K={k} "
                f"(patch {patch}, stride {stride}); use a smaller K",
                "tiling",
            )
        return out

    rows = axis_origins(m_rows, m, p)
    cols = axis_origins(n_cols, n, q)
    origins = [(r, c) for r in rows for c in cols]
    return WindowGrid((m_rows, n_cols), k, (m, n), (p, q), tuple(origins))


def extract(image: Raster, grid: WindowGrid, i: int) -> Raster:
    """Crop window i. Applied to an image and its mask alike, crops align."""
    if not 0 <= i < grid.count:
        raise DataError(f"window index {i} out of range [0, {grid.count})", "tiling")
    if image.size != grid.image_size:
        raise DataError(
            f"image size {image.size} does not match grid {grid.image_size}", "tiling"
        )
    r, c = grid.origins[i]
    m, n = grid.patch_size
    return Raster(image.data[r : r + m, c : c + n])


def extract_array(arr: np.ndarray, grid: WindowGrid, i: int) -> np.ndarray:
    """Array variant of extract for masks and score planes."""
    if not 0 <= i < grid.count:
        raise DataError(f"window index {i} out of range [0, {grid.count})", "tiling")
    r, c = grid.origins[i]
    m, n = grid.patch_size
    return arr[r : r + m, c : c + n]


def recompose(
    patches: list[tuple[int, ScoreMap]],
    grid: WindowGrid,
    hard_vote: bool = False,
) -> ScoreMap:
    """Stitch per-window probability maps back to a full-image map.

    Soft voting (default): each pixel's probability vector is the mean of
    the vectors from every window covering it. Hard voting: each window
    casts one vote for its argmax class, ties go to background. Coverage
    counts are integers; division happens once at the end.
    """
    seen = set()
    for i, s in patches:
        if not 0 <= i < grid.count:
            raise DataError(f"window index {i} out of range", "tiling")
        if i in seen:
            raise DataError(f"duplicated window index {i}", "tiling")
        if s.kind != PROBS:
            raise DataError("recompose needs probability maps", "tiling")
        if s.size != grid.patch_size:
            raise DataError(
                f"patch {i} size {s.size} does not match grid patch {grid.patch_size}",
                "tiling",
            )
        seen.add(i)
    if len(seen) != grid.count:
        missing = sorted(set(range(grid.count)) - seen)
        raise DataError(f"missing window indices {missing[:8]}", "tiling")

    m_rows, n_cols = grid.image_size
    m, n = grid.patch_size
    acc = np.zeros((m_rows, n_cols, 2), dtype=np.float64)
    cnt = np.zeros((m_rows, n_cols), dtype=np.int64)
    for i, s in sorted(patches, key=lambda t: t[0]):
        r, c = grid.origins[i]
        if hard_vote:
            fg = s.flower() > s.planes[:, :, 0]  # ties -> background
            vote = np.zeros((m, n, 2), dtype=np.float64)
            vote[:, :, 1] = fg
            vote[:, :, 0] = ~fg
            acc[r : r + m, c : c + n] += vote
        else:
            acc[r : r + m, c : c + n] += s.planes
        cnt[r : r + m, c : c + n] += 1
    if (cnt == 0).any():
        raise DataError("window layout leaves pixels uncovered", "tiling")
    return ScoreMap.from_probs(acc / cnt[:, :, None])
