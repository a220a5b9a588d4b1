"""Monte Carlo appearance-based refinement of low-confidence score maps.

Pixels whose flower probability is confidently high or low keep their
class; everything in between is re-decided by appearance. Each run thins
the two high-confidence sets into sparse seed pixels (expected density
one per spacing^2 area) and assigns every pixel to the seed minimizing

    D = ||color(p) - color(seed)||^2
        + spatial_weight * (pixel_distance(p, seed) / spacing)^2,

inheriting the seed's class. Votes across runs are thresholded into the
final mask, and high-confidence pixels are clamped to their own class so
refinement can never overturn a confident prediction.

The assignment is computed exactly (every pixel against every seed of
that run); a frontier-based growth is only an approximation of this
minimum and is deliberately not used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bloomseg.errors import DataError
from bloomseg.kernels import nearest_seed
from bloomseg.raster import PROBS, BinaryMask, Raster, ScoreMap, to_mask


@dataclass(frozen=True)
class RgrParams:
    spacing: float = 100.0
    num_runs: int = 10
    scoremap_threshold: float = 0.5
    hi_fg: float = 0.8
    hi_bg: float = 0.01
    spatial_weight: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.hi_bg < self.scoremap_threshold < self.hi_fg <= 1.0:
            raise DataError(
                "need 0 <= hi_bg < scoremap_threshold < hi_fg <= 1, got "
                f"({self.hi_bg}, {self.scoremap_threshold}, {self.hi_fg})",
                "rgr",
            )
        if self.spacing < 1:
            raise DataError(f"spacing must be >= 1, got {self.spacing}", "rgr")
        if self.num_runs < 1:
            raise DataError(f"num_runs must be >= 1, got {self.num_runs}", "rgr")
        if self.spatial_weight < 0:
            raise DataError("spatial_weight must be >= 0", "rgr")


@dataclass(frozen=True)
class PixelPartition:
    """Exhaustive, disjoint split into confident-fg / confident-bg / uncertain."""

    hi_fg: np.ndarray    # bool (H, W)
    hi_bg: np.ndarray
    uncertain: np.ndarray


def partition(probs: ScoreMap, params: RgrParams) -> PixelPartition:
    if probs.kind != PROBS:
        raise DataError("partition needs a probability map", "rgr")
    p = probs.flower()
    hi_fg = p >= params.hi_fg
    hi_bg = p <= params.hi_bg
    return PixelPartition(hi_fg, hi_bg, ~(hi_fg | hi_bg))


def sample_seeds(
    part: PixelPartition, spacing: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin the confident sets into seed pixels.

    Each candidate is kept independently with probability
    min(1, area / (spacing^2 * set_size)), giving an expected seed density
    of one per spacing^2 area per class. A nonempty candidate set always
    yields at least one seed. Returns (rows, cols, is_fg), foreground
    seeds first, each class in raster order.
    """
    h, w = part.hi_fg.shape
    area = float(h * w)
    rows, cols, isfg = [], [], []
    for cls_mask, fg in ((part.hi_fg, True), (part.hi_bg, False)):
        ys, xs = np.nonzero(cls_mask)
        if ys.size == 0:
            continue
        p = min(1.0, area / (spacing * spacing * ys.size))
        keep = rng.random(ys.size) < p
        if not keep.any():
            keep[rng.integers(ys.size)] = True
        rows.append(ys[keep])
        cols.append(xs[keep])
        isfg.append(np.full(int(keep.sum()), fg, dtype=bool))
    if not rows:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, bool))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(isfg)


def assign_foreground(
    image: Raster,
    seed_rows: np.ndarray,
    seed_cols: np.ndarray,
    seed_isfg: np.ndarray,
    params: RgrParams,
) -> np.ndarray:
    """Exact per-pixel nearest-seed assignment; True where the seed is fg."""
    if seed_rows.size == 0:
        raise DataError("assignment needs at least one seed", "rgr")
    h, w = image.height, image.width
    colors = image.data.reshape(h * w, image.channels)
    xo, yo = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    coords = np.stack([xo.ravel(), yo.ravel()], axis=1)
    seed_colors = image.data[seed_rows, seed_cols, :].astype(np.float64)
    seed_coords = np.stack(
        [seed_cols.astype(np.float64), seed_rows.astype(np.float64)], axis=1
    )
    wsp = params.spatial_weight / (params.spacing * params.spacing)
    idx = nearest_seed(colors, coords, seed_colors, seed_coords, wsp)
    return np.asarray(seed_isfg, dtype=bool)[idx].reshape(h, w)


def refine(image: Raster, probs: ScoreMap, params: RgrParams, seed: int) -> BinaryMask:
    """Refined binary mask; deterministic for fixed (inputs, params, seed)."""
    if probs.size != image.size:
        raise DataError(
            f"image {image.size} and score map {probs.size} sizes differ", "rgr"
        )
    part = partition(probs, params)
    have_fg = bool(part.hi_fg.any())
    have_bg = bool(part.hi_bg.any())
    if not have_fg and not have_bg:
        return to_mask(probs, params.scoremap_threshold)
    if not have_bg:
        return BinaryMask(np.ones(image.size, dtype=bool))
    if not have_fg:
        return BinaryMask(np.zeros(image.size, dtype=bool))

    votes = np.zeros(image.size, dtype=np.int64)
    for run_seq in np.random.SeedSequence(seed).spawn(params.num_runs):
        rng = np.random.default_rng(run_seq)
        rows, cols, isfg = sample_seeds(part, params.spacing, rng)
        votes += assign_foreground(image, rows, cols, isfg, params)

    fg = votes / params.num_runs >= params.scoremap_threshold
    fg[part.hi_fg] = True
    fg[part.hi_bg] = False
    return BinaryMask(fg)
