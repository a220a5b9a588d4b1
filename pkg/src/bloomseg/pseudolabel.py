"""Panoptic pseudo-labels: instances from connected components plus the
semantic mask, with a bit-exact on-disk representation.

A refined patch mask is rotated to every augmentation angle
(nearest-neighbor, so it stays binary); each rotated mask's connected
components become the flower instances, with tight inclusive bounding
boxes. Instance masks partition the semantic foreground exactly.

Disk layout per label: {dir}/{image}_{win}_{rot}/semantic.png (0/255),
instances.png (16-bit, 0 = background, k = k-th instance) and meta.json.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from bloomseg.augment import AngleSet, rotate
from bloomseg.errors import DataError
from bloomseg.kernels import label_components
from bloomseg.raster import BinaryMask, ClassId


@dataclass(frozen=True)
class LabelProvenance:
    sample_id: str
    window: int
    rotation: int
    iteration: int


@dataclass(frozen=True)
class InstanceAnnotation:
    """One flower instance: inclusive bbox and the mask cropped to it."""

    bbox: tuple[int, int, int, int]   # (x_min, y_min, x_max, y_max), inclusive
    mask: BinaryMask
    class_id: ClassId = ClassId.FLOWER

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if self.mask.size != (y1 - y0 + 1, x1 - x0 + 1):
            raise DataError("instance mask does not match its bbox extent", "pseudolabel")
        bits = self.mask.bits
        if not bits.any():
            raise DataError("instance mask is empty", "pseudolabel")
        if not (bits[0].any() and bits[-1].any() and bits[:, 0].any() and bits[:, -1].any()):
            raise DataError("instance bbox is not tight", "pseudolabel")


@dataclass(frozen=True)
class PanopticPseudoLabel:
    semantic: BinaryMask
    instances: tuple[InstanceAnnotation, ...]
    provenance: LabelProvenance
    angle: float = 0.0

    def __post_init__(self):
        placed = np.zeros(self.semantic.size, dtype=np.int32)
        for inst in self.instances:
            x0, y0, x1, y1 = inst.bbox
            placed[y0 : y1 + 1, x0 : x1 + 1] += inst.mask.bits
        if (placed > 1).any():
            raise DataError("instance masks overlap", "pseudolabel")
        if ((placed == 1) != self.semantic.bits).any():
            raise DataError(
                "instance masks do not partition the semantic foreground",
                "pseudolabel",
            )


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[np.ndarray]:
    """Maximal connected foreground components as (k, 2) arrays of (row, col).

    Components are ordered by (min row, min col); pixels within a
    component come in raster order. Empty mask gives an empty list.
    """
    labels, count = label_components(mask.bits, connectivity)
    comps = []
    for k in range(1, count + 1):
        ys, xs = np.nonzero(labels == k)
        comps.append(np.stack([ys, xs], axis=1))
    return comps


def instances_from_mask(
    mask: BinaryMask, connectivity: int = 8, min_area: int = 0
) -> tuple[InstanceAnnotation, ...]:
    """Tight-bbox instances for every component, optionally area-filtered."""
    out = []
    for comp in connected_components(mask, connectivity):
        if comp.shape[0] < max(1, min_area):
            continue
        ys, xs = comp[:, 0], comp[:, 1]
        y0, y1 = int(ys.min()), int(ys.max())
        x0, x1 = int(xs.min()), int(xs.max())
        crop = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
        crop[ys - y0, xs - x0] = True
        out.append(InstanceAnnotation((x0, y0, x1, y1), BinaryMask(crop)))
    return tuple(out)


def from_mask(
    mask: BinaryMask,
    provenance: LabelProvenance,
    angle: float = 0.0,
    connectivity: int = 8,
    min_area: int = 0,
) -> PanopticPseudoLabel:
    """Panoptic label for an already-rotated binary mask."""
    return PanopticPseudoLabel(
        mask, instances_from_mask(mask, connectivity, min_area), provenance, angle
    )


def to_panoptic(
    mask: BinaryMask,
    angles: AngleSet,
    sample_id: str,
    window: int,
    iteration: int,
    connectivity: int = 8,
    min_area: int = 0,
) -> list[PanopticPseudoLabel]:
    """One panoptic label per rotation angle of a refined patch mask."""
    labels = []
    for j, theta in enumerate(angles.angles):
        view = rotate(mask, theta)
        prov = LabelProvenance(sample_id, window, j, iteration)
        labels.append(from_mask(view.content, prov, theta, connectivity, min_area))
    return labels


# ---------------------------------------------------------------------------
# Disk round trip


def _label_dirname(prov: LabelProvenance) -> str:
    return f"{prov.sample_id}_{prov.window}_{prov.rotation}"


def _atomic_save(img: Image.Image, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def write_labels(labels: list[PanopticPseudoLabel], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for label in labels:
        d = out / _label_dirname(label.provenance)
        d.mkdir(parents=True, exist_ok=True)
        sem = np.where(label.semantic.bits, 255, 0).astype(np.uint8)
        _atomic_save(Image.fromarray(sem, mode="L"), d / "semantic.png")

        inst = np.zeros(label.semantic.size, dtype=np.uint16)
        for k, ann in enumerate(label.instances, start=1):
            x0, y0, x1, y1 = ann.bbox
            region = inst[y0 : y1 + 1, x0 : x1 + 1]
            region[ann.mask.bits] = k
        _atomic_save(Image.fromarray(inst), d / "instances.png")

        meta = {
            "sample_id": label.provenance.sample_id,
            "window": label.provenance.window,
            "rotation": label.provenance.rotation,
            "iteration": label.provenance.iteration,
            "angle": label.angle,
            "instance_count": len(label.instances),
            "bboxes": [list(a.bbox) for a in label.instances],
        }
        tmp = d / "meta.json.tmp"
        with open(tmp, "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, d / "meta.json")


def _read_field(meta: dict, key: str, path: Path):
    if key not in meta:
        raise DataError(f"label meta {path} is missing field {key!r}", "pseudolabel")
    return meta[key]


def read_labels(label_dir: str | Path) -> list[PanopticPseudoLabel]:
    """Reconstruct every label below `label_dir`; bit-exact round trip."""
    root = Path(label_dir)
    if not root.is_dir():
        raise DataError(f"label directory {root} does not exist", "pseudolabel")
    labels = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        meta_path = d / "meta.json"
        try:
            with open(meta_path) as f:
                meta = json.load(f)
        except FileNotFoundError:
            raise DataError(f"label dir {d} is missing meta.json", "pseudolabel")
        except json.JSONDecodeError as e:
            raise DataError(f"malformed meta.json at {meta_path}: {e}", "pseudolabel")

        prov = LabelProvenance(
            str(_read_field(meta, "sample_id", meta_path)),
            int(_read_field(meta, "window", meta_path)),
            int(_read_field(meta, "rotation", meta_path)),
            int(_read_field(meta, "iteration", meta_path)),
        )
        angle = float(_read_field(meta, "angle", meta_path))
        count = int(_read_field(meta, "instance_count", meta_path))

        sem_path = d / "semantic.png"
        inst_path = d / "instances.png"
        if not sem_path.exists():
            raise DataError(f"label dir {d} is missing semantic.png", "pseudolabel")
        if not inst_path.exists():
            raise DataError(f"label dir {d} is missing instances.png", "pseudolabel")
        semantic = BinaryMask(np.asarray(Image.open(sem_path)) != 0)
        inst_map = np.asarray(Image.open(inst_path)).astype(np.int32)
        if inst_map.shape != semantic.size:
            raise DataError(
                f"{inst_path}: instance map shape {inst_map.shape} does not match "
                f"semantic mask {semantic.size}",
                "pseudolabel",
            )
        if count and inst_map.max() != count:
            raise DataError(
                f"{inst_path}: instance ids run to {inst_map.max()} but meta "
                f"instance_count is {count}",
                "pseudolabel",
            )

        instances = []
        for k in range(1, count + 1):
            ys, xs = np.nonzero(inst_map == k)
            if ys.size == 0:
                raise DataError(f"{inst_path}: instance {k} has no pixels", "pseudolabel")
            y0, y1 = int(ys.min()), int(ys.max())
            x0, x1 = int(xs.min()), int(xs.max())
            crop = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
            crop[ys - y0, xs - x0] = True
            instances.append(InstanceAnnotation((x0, y0, x1, y1), BinaryMask(crop)))
        meta_boxes = [tuple(int(v) for v in b) for b in _read_field(meta, "bboxes", meta_path)]
        if meta_boxes != [a.bbox for a in instances]:
            raise DataError(
                f"{meta_path}: field 'bboxes' disagrees with instances.png", "pseudolabel"
            )
        labels.append(PanopticPseudoLabel(semantic, tuple(instances), prov, angle))
    return labels
