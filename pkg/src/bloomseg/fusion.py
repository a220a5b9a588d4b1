"""Fusing reverse-rotated multi-view predictions into one score map.

Each rotated view's logits are remapped back to the patch frame first
(bilinear interpolation happens on logits), normalized with a softmax
afterwards, and averaged per pixel over the views that are valid there.
Where every view is valid this equals the plain 1/J average; at patch
corners the expanded-canvas rotation leaves some views undefined and the
0/1-weighted mean simply drops them. The identity view covers every
pixel, so support never falls to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bloomseg.augment import AngleSet, RotatedView, canvas_size, unrotate
from bloomseg.errors import DataError
from bloomseg.raster import LOGITS, BinaryMask, ScoreMap


@dataclass(frozen=True)
class AugmentedPrediction:
    """Model logits on one rotation canvas plus the canvas validity mask."""

    rotation: int
    logits: ScoreMap
    validity: BinaryMask

    def __post_init__(self):
        if self.logits.kind != LOGITS:
            raise DataError("augmented prediction must carry logits", "fusion")
        if self.logits.size != self.validity.size:
            raise DataError("prediction and validity geometry differ", "fusion")


@dataclass(frozen=True)
class FusedScoreMap:
    """Patch-frame probabilities plus the per-pixel count of fused views."""

    probs: ScoreMap
    support: np.ndarray

    def __post_init__(self):
        if self.probs.kind != "probs":
            raise DataError("fused map must hold probabilities", "fusion")
        if self.support.min() < 1:
            raise DataError("fused map has unsupported pixels", "fusion")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Two-class softmax over the last axis, stabilized by max subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_map(s: ScoreMap) -> ScoreMap:
    if s.kind != LOGITS:
        raise DataError("softmax_map expects logits", "fusion")
    return ScoreMap.from_probs(softmax(s.planes))


def fuse(
    views: list[AugmentedPrediction],
    angles: AngleSet,
    source_size: tuple[int, int],
) -> FusedScoreMap:
    """Average the softmax of each reverse-rotated view, one view per angle."""
    if not views:
        raise DataError("cannot fuse an empty view list", "fusion")
    by_rotation = {v.rotation: v for v in views}
    if len(by_rotation) != len(views):
        raise DataError("duplicate rotation index in view list", "fusion")
    if sorted(by_rotation) != list(range(angles.count)):
        raise DataError(
            f"need exactly one view per angle 0..{angles.count - 1}", "fusion"
        )

    m, n = source_size
    acc = np.zeros((m, n, 2), dtype=np.float64)
    cnt = np.zeros((m, n), dtype=np.int64)
    # fixed ascending-rotation order keeps float accumulation deterministic
    for j in range(angles.count):
        view = by_rotation[j]
        theta = angles.angles[j]
        expected = canvas_size(source_size, theta)
        if view.logits.size != expected:
            raise DataError(
                f"view {j} canvas {view.logits.size} inconsistent with angle "
                f"{theta:.4f} (expected {expected})",
                "fusion",
            )
        rotated = RotatedView(theta, view.logits, view.validity, source_size)
        logits_back, valid_back = unrotate(rotated)
        probs = softmax(logits_back.planes)
        w = valid_back.bits
        acc[w] += probs[w]
        cnt += w

    if (cnt == 0).any():
        raise DataError(
            "pixel with no valid view; the identity view must always be present",
            "fusion",
        )
    mean = acc / cnt[:, :, None]
    # renormalize away interpolation drift
    mean = mean / mean.sum(axis=2, keepdims=True)
    return FusedScoreMap(ScoreMap.from_probs(mean), cnt)
