import numpy as np
import pytest

from bloomseg.raster import BinaryMask, Raster, ScoreMap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_image(h: int, w: int, channels: int = 1) -> Raster:
    """Low-frequency test pattern in [0.1, 0.9]; safe for round-trip checks."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 0.5 + 0.2 * np.sin(2 * np.pi * x / max(w, 1) * 2) * np.cos(
        2 * np.pi * y / max(h, 1) * 2
    ) + 0.15 * np.sin(2 * np.pi * (x + y) / max(h + w, 1) * 3)
    return Raster(np.repeat(base[:, :, None], channels, axis=2))


def random_probs(rng, h: int, w: int) -> ScoreMap:
    fg = rng.random((h, w))
    return ScoreMap.from_probs(np.stack([1.0 - fg, fg], axis=2))


def random_mask(rng, h: int, w: int, density: float = 0.5) -> BinaryMask:
    return BinaryMask(rng.random((h, w)) < density)
