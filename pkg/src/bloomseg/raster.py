"""Pixel-grid containers and sampling primitives shared by the whole pipeline.

Conventions, fixed once here: row-major storage, origin at the top-left,
x rightward (columns), y downward (rows). Color values are scalars in
[0, 1]; 8-bit files are divided by 255 at load time. All containers are
immutable after construction (arrays are marked read-only), so they are
safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

from bloomseg.errors import DataError


class ClassId(IntEnum):
    """The two-class world: background is stuff, flower is the only thing."""

    BACKGROUND = 0
    FLOWER = 1


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Raster:
    """A (height, width, channels) float64 grid; channels is 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise DataError(f"raster needs (h, w, 1|3) data, got {a.shape}", "raster")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise DataError(f"raster has empty extent {a.shape}", "raster")
        if not np.isfinite(a).all():
            raise DataError("raster contains non-finite values", "raster")
        object.__setattr__(self, "data", _freeze(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        """(rows, cols)."""
        return (self.height, self.width)


@dataclass(frozen=True)
class BinaryMask:
    """One boolean per pixel, aligned with the raster it annotates."""

    bits: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.bits)
        if a.ndim != 2:
            raise DataError(f"mask needs (h, w) bits, got shape {a.shape}", "raster")
        object.__setattr__(self, "bits", _freeze(a.astype(bool)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


LOGITS = "logits"
PROBS = "probs"


@dataclass(frozen=True)
class ScoreMap:
    """Two per-class planes, either raw logits or normalized probabilities.

    Probability maps must sum to 1 (+-1e-6) per pixel, except that
    all-zero pixels are tolerated: rotation onto an expanded canvas pads
    with zeros, and those pixels are always masked invalid downstream.
    """

    planes: np.ndarray
    kind: str

    def __post_init__(self):
        a = np.asarray(self.planes, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != 2:
            raise DataError(f"score map needs (h, w, 2) planes, got {a.shape}", "raster")
        if not np.isfinite(a).all():
            raise DataError("score map contains non-finite values", "raster")
        if self.kind not in (LOGITS, PROBS):
            raise DataError(f"score map kind must be logits|probs, got {self.kind!r}", "raster")
        if self.kind == PROBS:
            if a.min() < 0.0 or a.max() > 1.0 + 1e-9:
                raise DataError("probability map values outside [0, 1]", "raster")
            sums = a.sum(axis=2)
            bad = ~(np.isclose(sums, 1.0, atol=1e-6) | (sums == 0.0))
            if bad.any():
                raise DataError("probability map pixels do not sum to 1", "raster")
        object.__setattr__(self, "planes", _freeze(a))

    @property
    def height(self) -> int:
        return self.planes.shape[0]

    @property
    def width(self) -> int:
        return self.planes.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.planes.shape[:2]

    def flower(self) -> np.ndarray:
        """The flower-class plane."""
        return self.planes[:, :, ClassId.FLOWER]

    @staticmethod
    def from_logits(planes: np.ndarray) -> "ScoreMap":
        return ScoreMap(planes, LOGITS)

    @staticmethod
    def from_probs(planes: np.ndarray) -> "ScoreMap":
        return ScoreMap(planes, PROBS)


def bilinear_sample(r: Raster, x: float, y: float) -> tuple[tuple[float, ...], bool]:
    """Bilinear interpolation of the 4 neighbors at fractional (x, y).

    Outside [0, width-1] x [0, height-1] the value is 0 per channel and
    the validity flag is False. Exact at integer coordinates.
    """
    w, h = r.width, r.height
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        return tuple(0.0 for _ in range(r.channels)), False
    x0 = min(int(math.floor(x)), w - 1)
    y0 = min(int(math.floor(y)), h - 1)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    gx = 1.0 - fx
    gy = 1.0 - fy
    vals = []
    for k in range(r.channels):
        vals.append(
            r.data[y0, x0, k] * (gx * gy)
            + r.data[y0, x1, k] * (fx * gy)
            + r.data[y1, x0, k] * (gx * fy)
            + r.data[y1, x1, k] * (fx * fy)
        )
    return tuple(float(v) for v in vals), True


def to_mask(s: ScoreMap, threshold: float) -> BinaryMask:
    """Hard-threshold the flower plane: foreground iff p_flower >= threshold."""
    if s.kind != PROBS:
        raise DataError("to_mask requires a probability map, got logits", "raster")
    if not (0.0 <= threshold <= 1.0):
        raise DataError(f"threshold must be in [0, 1], got {threshold}", "raster")
    return BinaryMask(s.flower() >= threshold)


# ---------------------------------------------------------------------------
# File I/O: 8-bit RGB / grayscale images, 8-bit masks (0 = background,
# nonzero = foreground on read; 0/255 on write).

def read_image(path: str | Path) -> Raster:
    try:
        img = Image.open(path)
        img.load()
    except Exception as e:
        raise DataError(f"cannot read image {path}: {e}", "raster") from e
    if img.mode in ("L", "I;16"):
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        return Raster(arr[:, :, None])
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return Raster(arr)


def write_image(path: str | Path, r: Raster) -> None:
    arr = np.clip(np.round(r.data * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)


def read_mask(path: str | Path) -> BinaryMask:
    try:
        img = Image.open(path)
        img.load()
    except Exception as e:
        raise DataError(f"cannot read mask {path}: {e}", "raster") from e
    arr = np.asarray(img.convert("L"))
    return BinaryMask(arr != 0)


def write_mask(path: str | Path, m: BinaryMask) -> None:
    Image.fromarray(np.where(m.bits, 255, 0).astype(np.uint8), mode="L").save(path)
