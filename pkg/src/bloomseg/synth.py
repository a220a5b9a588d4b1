"""Procedural flower scenes with exact ground truth.

Lobed blobs (petal-modulated radius around a center) over a textured
background with non-flower distractor blobs. The mask is written as the
flowers are painted, so it is exact by construction. Everything is
deterministic per (spec.seed, image index). `shift` derives specs with a
controlled appearance change to emulate a different flower species.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from bloomseg.errors import DataError
from bloomseg.raster import BinaryMask, Raster, write_image, write_mask

# petal radius modulation r(phi) = r0 * (LOBE_BASE + LOBE_AMP * cos(lobes*phi + phase))
LOBE_BASE = 0.62
LOBE_AMP = 0.38

HUE_SHIFT_DEG = 60.0
SCALE_SHIFT = 0.5
CLUTTER_SHIFT = 3


@dataclass(frozen=True)
class SceneSpec:
    size: tuple[int, int] = (96, 96)          # (rows, cols)
    flower_count: tuple[int, int] = (3, 6)     # inclusive range
    flower_rgb: tuple[float, float, float] = (0.85, 0.35, 0.55)
    flower_spread: float = 0.05
    radius: tuple[float, float] = (5.0, 9.0)
    lobes: int = 5
    background_rgb: tuple[float, float, float] = (0.20, 0.30, 0.16)
    texture_scale: int = 12
    distractor_count: int = 3
    distractor_rgb: tuple[float, float, float] = (0.52, 0.42, 0.30)
    center_shading: float = 0.15
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for v in self.flower_rgb + self.background_rgb + self.distractor_rgb:
            if not 0.0 <= v <= 1.0:
                raise DataError(f"color component {v} outside [0, 1]", "synth")
        if self.flower_count[0] < 0 or self.flower_count[1] < self.flower_count[0]:
            raise DataError(f"bad flower count range {self.flower_count}", "synth")
        if self.distractor_count < 0:
            raise DataError("distractor count must be >= 0", "synth")


def _smooth_noise(rng: np.random.Generator, h: int, w: int, scale: int, amp: float):
    ch = max(2, h // max(1, scale))
    cw = max(2, w // max(1, scale))
    coarse = rng.uniform(-amp, amp, size=(ch, cw))
    return ndimage.zoom(coarse, (h / ch, w / cw), order=1, mode="nearest")[:h, :w]


def _paint_blob(
    img: np.ndarray,
    rng: np.random.Generator,
    cy: float,
    cx: float,
    r0: float,
    lobes: int,
    phase: float,
    color: np.ndarray,
    shading: float = 0.15,
) -> np.ndarray:
    """Paint one lobed blob; returns its boolean footprint."""
    h, w = img.shape[:2]
    rad = int(math.ceil(r0)) + 1
    y0, y1 = max(0, int(cy) - rad), min(h, int(cy) + rad + 1)
    x0, x1 = max(0, int(cx) - rad), min(w, int(cx) + rad + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy = yy - cy
    dx = xx - cx
    rho = np.sqrt(dx * dx + dy * dy)
    phi = np.arctan2(dy, dx)
    redge = r0 * (LOBE_BASE + LOBE_AMP * np.cos(lobes * phi + phase))
    inside = rho <= redge
    if inside.any():
        shade = 1.0 + shading * (1.0 - np.clip(rho / max(r0, 1e-9), 0, 1))
        img[y0:y1, x0:x1][inside] = np.clip(
            color[None, :] * shade[inside][:, None], 0.0, 1.0
        )
    footprint = np.zeros((h, w), dtype=bool)
    footprint[y0:y1, x0:x1] = inside
    return footprint


def generate(spec: SceneSpec, n_images: int) -> list[tuple[Raster, BinaryMask]]:
    """n ground-truthed scenes, deterministic per (spec.seed, index)."""
    out = []
    for idx in range(n_images):
        rng = np.random.default_rng([spec.seed, idx])
        h, w = spec.size
        img = np.empty((h, w, 3), dtype=np.float64)
        base = np.array(spec.background_rgb)
        for ch in range(3):
            img[:, :, ch] = base[ch] + _smooth_noise(rng, h, w, spec.texture_scale, 0.07)

        margin = spec.radius[1] + 1
        for _ in range(spec.distractor_count):
            cy = rng.uniform(margin, h - margin)
            cx = rng.uniform(margin, w - margin)
            r0 = rng.uniform(*spec.radius) * 0.8
            color = np.clip(
                np.array(spec.distractor_rgb) + rng.normal(0, spec.flower_spread, 3),
                0,
                1,
            )
            _paint_blob(img, rng, cy, cx, r0, 3, rng.uniform(0, 2 * math.pi), color,
                        spec.center_shading)

        mask = np.zeros((h, w), dtype=bool)
        count = int(rng.integers(spec.flower_count[0], spec.flower_count[1] + 1))
        for _ in range(count):
            cy = rng.uniform(margin, h - margin)
            cx = rng.uniform(margin, w - margin)
            r0 = rng.uniform(*spec.radius)
            color = np.clip(
                np.array(spec.flower_rgb) + rng.normal(0, spec.flower_spread, 3), 0, 1
            )
            mask |= _paint_blob(
                img, rng, cy, cx, r0, spec.lobes, rng.uniform(0, 2 * math.pi), color,
                spec.center_shading,
            )

        img += rng.uniform(-spec.noise, spec.noise, size=img.shape)
        out.append((Raster(np.clip(img, 0.0, 1.0)), BinaryMask(mask)))
    return out


def rotate_hue(rgb: tuple[float, float, float], degrees: float):
    hue, sat, val = colorsys.rgb_to_hsv(*rgb)
    return colorsys.hsv_to_rgb((hue + degrees / 360.0) % 1.0, sat, val)


def shift(spec: SceneSpec, kind: str) -> SceneSpec:
    """Derived spec emulating a domain change: hue / scale / clutter."""
    if kind == "hue":
        return replace(spec, flower_rgb=rotate_hue(spec.flower_rgb, HUE_SHIFT_DEG))
    if kind == "scale":
        lo, hi = spec.radius
        return replace(spec, radius=(max(2.0, lo * SCALE_SHIFT), max(2.0, hi * SCALE_SHIFT)))
    if kind == "clutter":
        return replace(spec, distractor_count=spec.distractor_count * CLUTTER_SHIFT)
    raise DataError(f"unknown shift kind {kind!r} (hue|scale|clutter)", "synth")


def write_dataset(
    out_dir: str | Path, pairs: list[tuple[Raster, BinaryMask]], prefix: str = "img"
) -> None:
    """images/{id}.png + masks/{id}.png, the layout the pipeline consumes."""
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i, (image, mask) in enumerate(pairs):
        sid = f"{prefix}-{i:03d}"
        write_image(root / "images" / f"{sid}.png", image)
        write_mask(root / "masks" / f"{sid}.png", mask)
