"""Dataset plumbing: the images/{id}.png + masks/{id}.png directory layout.

Samples are lazy: pixel data is read on demand so large pools can be
enumerated (and counted) without touching every file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from bloomseg.errors import DataError
from bloomseg.raster import BinaryMask, Raster, read_image, read_mask


@dataclass
class FileSample:
    sample_id: str
    image_path: Path
    mask_path: Path | None = None
    _size: tuple[int, int] | None = field(default=None, repr=False)

    def size(self) -> tuple[int, int]:
        if self._size is None:
            with Image.open(self.image_path) as img:
                self._size = (img.height, img.width)
        return self._size

    def mask_size(self) -> tuple[int, int]:
        if self.mask_path is None:
            raise DataError(f"sample {self.sample_id} has no mask", "data")
        with Image.open(self.mask_path) as img:
            return (img.height, img.width)

    def image(self) -> Raster:
        return read_image(self.image_path)

    def mask(self) -> BinaryMask:
        if self.mask_path is None:
            raise DataError(f"sample {self.sample_id} has no mask", "data")
        return read_mask(self.mask_path)


@dataclass
class MemorySample:
    sample_id: str
    image_data: Raster
    mask_data: BinaryMask | None = None

    def size(self) -> tuple[int, int]:
        return self.image_data.size

    def mask_size(self) -> tuple[int, int]:
        if self.mask_data is None:
            raise DataError(f"sample {self.sample_id} has no mask", "data")
        return self.mask_data.size

    def image(self) -> Raster:
        return self.image_data

    def mask(self) -> BinaryMask:
        if self.mask_data is None:
            raise DataError(f"sample {self.sample_id} has no mask", "data")
        return self.mask_data


def load_dataset(root: str | Path, require_masks: bool = False) -> list[FileSample]:
    """Scan a dataset directory: images/{id}.png and optionally masks/{id}.png."""
    root = Path(root)
    img_dir = root / "images"
    mask_dir = root / "masks"
    if not img_dir.is_dir():
        raise DataError(f"dataset {root} has no images/ directory", "data")
    samples = []
    for path in sorted(img_dir.iterdir()):
        if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        sid = path.stem
        mask_path = None
        for ext in (".png", ".jpg", ".jpeg"):
            cand = mask_dir / f"{sid}{ext}"
            if cand.exists():
                mask_path = cand
                break
        if require_masks and mask_path is None:
            raise DataError(f"sample {sid} in {root} has no mask file", "data")
        samples.append(FileSample(sid, path, mask_path))
    if not samples:
        raise DataError(f"dataset {root} contains no images", "data")
    return samples
