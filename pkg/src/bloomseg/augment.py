"""Stratified rotation sampling and forward/reverse patch rotation.

Rotations go onto an expanded canvas (the bounding box of the rotated
patch rectangle) with zero fill plus a validity mask, so no corner is
lost and downstream fusion can ignore the fill. Color and score content
is resampled bilinearly, binary masks by nearest neighbor. Angles of
0, pi/2, pi, 3pi/2 are exact index permutations: their sines/cosines are
snapped to 0/+-1 so the resampling coordinates land on integers.

Also assembles the augmented labeled / unlabeled pools: every
(image, window, rotation) combination, enumerable lazily.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from bloomseg import tiling
from bloomseg.errors import DataError
from bloomseg.kernels import resample_affine
from bloomseg.raster import BinaryMask, Raster, ScoreMap, write_image, write_mask

DEFAULT_SECTOR_CENTERS = tuple((math.pi / 2) * k for k in range(5))
SECTOR_HALF_WIDTH = math.pi / 5

Content = Union[Raster, ScoreMap, BinaryMask]


def _circ_diff(a: float, b: float) -> float:
    """Signed circular difference a - b in (-pi, pi]."""
    d = (a - b) % (2 * math.pi)
    if d > math.pi:
        d -= 2 * math.pi
    return d


@dataclass(frozen=True)
class AngleSet:
    """Ordered rotation angles; the first is always the identity view."""

    angles: tuple[float, ...]
    seed: int
    sector_centers: tuple[float, ...] = DEFAULT_SECTOR_CENTERS

    def __post_init__(self):
        if len(self.angles) < 1:
            raise DataError("angle set needs at least one angle", "augment")
        if self.angles[0] != 0.0:
            raise DataError("first angle must be the identity (0)", "augment")
        for theta in self.angles[1:]:
            inside = any(
                abs(_circ_diff(theta, c)) <= SECTOR_HALF_WIDTH + 1e-9
                for c in self.sector_centers
            )
            if not inside:
                raise DataError(
                    f"angle {theta:.4f} lies outside every rotation sector", "augment"
                )

    @property
    def count(self) -> int:
        return len(self.angles)


def sample_angles(
    j: int,
    seed: int,
    sector_centers: Sequence[float] = DEFAULT_SECTOR_CENTERS,
) -> AngleSet:
    """Identity plus j-1 angles assigned round-robin to the five sectors.

    Each non-identity angle is drawn uniformly within its sector of width
    2*pi/5; the draw is deterministic for a fixed seed.
    """
    if j < 1:
        raise DataError(f"need at least one rotation, got {j}", "augment")
    rng = np.random.default_rng(seed)
    centers = tuple(sector_centers)
    angles = [0.0]
    for idx in range(1, j):
        center = centers[(idx - 1) % len(centers)]
        lo = center - SECTOR_HALF_WIDTH
        theta = (lo + rng.random() * (2 * SECTOR_HALF_WIDTH)) % (2 * math.pi)
        angles.append(float(theta))
    return AngleSet(tuple(angles), seed, centers)


def _snap_trig(theta: float) -> tuple[float, float]:
    """cos/sin with right-angle values snapped exactly to 0 / +-1."""
    c = math.cos(theta)
    s = math.sin(theta)
    for name, v in (("c", c), ("s", s)):
        snapped = v
        if abs(v) < 1e-12:
            snapped = 0.0
        elif abs(v - 1.0) < 1e-12:
            snapped = 1.0
        elif abs(v + 1.0) < 1e-12:
            snapped = -1.0
        if name == "c":
            c = snapped
        else:
            s = snapped
    return c, s


def canvas_size(source_size: tuple[int, int], theta: float) -> tuple[int, int]:
    """Axis-aligned bounding box (rows, cols) of the rotated patch rectangle."""
    m, n = source_size
    c, s = _snap_trig(theta)
    out_w = math.ceil(n * abs(c) + m * abs(s) - 1e-9)
    out_h = math.ceil(n * abs(s) + m * abs(c) - 1e-9)
    return out_h, out_w


@dataclass(frozen=True)
class RotatedView:
    """A patch (or mask / score map) on its rotation canvas.

    `validity` marks canvas pixels whose preimage lies inside the source
    patch; everything else is zero fill.
    """

    angle: float
    content: Content
    validity: BinaryMask
    source_size: tuple[int, int]

    def __post_init__(self):
        if self.content.size != self.validity.size:
            raise DataError("view content and validity geometry differ", "augment")


def _content_array(content: Content) -> tuple[np.ndarray, bool]:
    """(float64 (h, w, c) array, bilinear?) for any rotatable content."""
    if isinstance(content, Raster):
        return content.data, True
    if isinstance(content, ScoreMap):
        return content.planes, True
    if isinstance(content, BinaryMask):
        return content.bits.astype(np.float64)[:, :, None], False
    raise DataError(f"cannot rotate content of type {type(content).__name__}", "augment")


def _rewrap(content: Content, arr: np.ndarray) -> Content:
    if isinstance(content, Raster):
        return Raster(arr)
    if isinstance(content, ScoreMap):
        return ScoreMap(arr, content.kind)
    return BinaryMask(arr[:, :, 0] > 0.5)


def rotate(content: Content, theta: float) -> RotatedView:
    """Rotate about the patch center onto the expanded canvas."""
    src, bilinear = _content_array(content)
    m, n = src.shape[0], src.shape[1]
    if m < 1 or n < 1:
        raise DataError("cannot rotate empty content", "augment")
    c, s = _snap_trig(theta)
    out_h, out_w = canvas_size((m, n), theta)

    cx = (n - 1) / 2.0
    cy = (m - 1) / 2.0
    ccx = (out_w - 1) / 2.0
    ccy = (out_h - 1) / 2.0
    # canvas pixel -> source coordinate (inverse rotation about centers)
    tx = -c * ccx + s * ccy + cx
    ty = -s * ccx - c * ccy + cy
    out, valid = resample_affine(src, None, c, -s, tx, s, c, ty, out_h, out_w, bilinear)
    return RotatedView(theta, _rewrap(content, out), BinaryMask(valid), (m, n))


def unrotate(view: RotatedView) -> tuple[Content, BinaryMask]:
    """Map a view (or a prediction on its canvas) back to the source frame.

    Returns the content at source size plus a validity mask that is False
    wherever the reconstruction had to sample invalid canvas pixels.
    """
    src, bilinear = _content_array(view.content)
    m, n = view.source_size
    expected = canvas_size((m, n), view.angle)
    if (src.shape[0], src.shape[1]) != expected:
        raise DataError(
            f"view canvas {src.shape[:2]} does not match rotation of source "
            f"{view.source_size} by {view.angle:.4f} (expected {expected})",
            "augment",
        )
    c, s = _snap_trig(view.angle)
    cx = (n - 1) / 2.0
    cy = (m - 1) / 2.0
    ccx = (expected[1] - 1) / 2.0
    ccy = (expected[0] - 1) / 2.0
    # source pixel -> canvas coordinate (forward rotation about centers)
    tx = -c * cx - s * cy + ccx
    ty = s * cx - c * cy + ccy
    out, valid = resample_affine(
        src, view.validity.bits.astype(np.uint8), c, s, tx, -s, c, ty, m, n, bilinear
    )
    return _rewrap(view.content, out), BinaryMask(valid)


# ---------------------------------------------------------------------------
# Augmented sample pools


@dataclass(frozen=True)
class Provenance:
    sample_id: str
    window: int
    rotation: int


@dataclass(frozen=True)
class LabeledItem:
    patch: RotatedView      # rotated image patch
    label: RotatedView      # rotated mask, pixel-aligned with the patch
    provenance: Provenance


@dataclass(frozen=True)
class UnlabeledItem:
    patch: RotatedView
    provenance: Provenance


class _AugmentedPool:
    """Lazy enumeration of every (sample, window, rotation) combination."""

    def __init__(self, samples, k: int, angles: AngleSet):
        self.samples = list(samples)
        self.k = k
        self.angles = angles
        self.windows = (2 * k - 1) ** 2
        self._grids: dict[int, tiling.WindowGrid] = {}

    def __len__(self) -> int:
        return len(self.samples) * self.windows * self.angles.count

    def provenance(self, idx: int) -> Provenance:
        s, w, j = self._split(idx)
        return Provenance(self.samples[s].sample_id, w, j)

    def _split(self, idx: int) -> tuple[int, int, int]:
        if not 0 <= idx < len(self):
            raise IndexError(idx)
        per_sample = self.windows * self.angles.count
        s, rem = divmod(idx, per_sample)
        w, j = divmod(rem, self.angles.count)
        return s, w, j

    def grid(self, sample_idx: int) -> tiling.WindowGrid:
        if sample_idx not in self._grids:
            size = self.samples[sample_idx].size()
            self._grids[sample_idx] = tiling.plan_grid(size, self.k)
        return self._grids[sample_idx]


class LabeledSet(_AugmentedPool):
    """All rotated (patch, mask) pairs of a labeled sample collection."""

    def __getitem__(self, idx: int) -> LabeledItem:
        s, w, j = self._split(idx)
        sample = self.samples[s]
        grid = self.grid(s)
        image = sample.image()
        mask = sample.mask()
        if mask.size != image.size:
            raise DataError(
                f"mask size {mask.size} misaligned with image {image.size} "
                f"for sample {sample.sample_id}",
                "augment",
            )
        theta = self.angles.angles[j]
        patch = rotate(tiling.extract(image, grid, w), theta)
        label = rotate(BinaryMask(tiling.extract_array(mask.bits, grid, w)), theta)
        return LabeledItem(patch, label, Provenance(sample.sample_id, w, j))


class UnlabeledSet(_AugmentedPool):
    """All rotated patches of an unlabeled collection; labels arrive later."""

    def __getitem__(self, idx: int) -> UnlabeledItem:
        s, w, j = self._split(idx)
        sample = self.samples[s]
        grid = self.grid(s)
        theta = self.angles.angles[j]
        patch = rotate(tiling.extract(sample.image(), grid, w), theta)
        return UnlabeledItem(patch, Provenance(sample.sample_id, w, j))


def build_labeled_set(samples, k: int, j: int, seed: int) -> LabeledSet:
    """The full augmented training pool: count = samples * (2K-1)^2 * J."""
    angles = sample_angles(j, seed)
    pool = LabeledSet(samples, k, angles)
    for s in pool.samples:
        if hasattr(s, "mask_size") and s.mask_size() != s.size():
            raise DataError(
                f"mask size {s.mask_size()} misaligned with image {s.size()} "
                f"for sample {s.sample_id}",
                "augment",
            )
    return pool


def build_unlabeled_set(samples, k: int, j: int, seed: int) -> UnlabeledSet:
    return UnlabeledSet(samples, k, sample_angles(j, seed))


def write_cache(pool: LabeledSet | UnlabeledSet, out_dir: str | Path) -> None:
    """Materialize a pool to disk: one raster per view plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx in range(len(pool)):
        item = pool[idx]
        prov = item.provenance
        stem = f"image-{prov.sample_id}_win-{prov.window}_rot-{prov.rotation}"
        write_image(out / f"{stem}.png", item.patch.content)
        write_mask(out / f"{stem}_valid.png", item.patch.validity)
        if isinstance(item, LabeledItem):
            write_mask(out / f"{stem}_label.png", item.label.content)
        entries.append(
            {
                "image": prov.sample_id,
                "window": prov.window,
                "rotation": prov.rotation,
                "angle": pool.angles.angles[prov.rotation],
                "file": f"{stem}.png",
            }
        )
    manifest = {
        "window_factor": pool.k,
        "rotations": pool.angles.count,
        "seed": pool.angles.seed,
        "angles": list(pool.angles.angles),
        "items": entries,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
