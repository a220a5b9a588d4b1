"""Byte-for-byte stability of the on-disk label format.

The files under tests/golden/ were produced once from the hand-built
two-instance mask below and frozen after manual inspection; any change
to the serialization is a format break and must fail here.
"""

from pathlib import Path

import numpy as np

from bloomseg.pseudolabel import LabelProvenance, from_mask, read_labels, write_labels
from bloomseg.raster import BinaryMask

GOLDEN_DIR = Path(__file__).parent / "golden"


def golden_label():
    bits = np.zeros((10, 12), dtype=bool)
    bits[1:4, 1:3] = True    # vertical bar of an L
    bits[3:5, 1:6] = True    # foot of the L, same component
    bits[7:9, 8:10] = True   # separate square
    return from_mask(bits_mask(bits), LabelProvenance("golden", 2, 1, 3), angle=0.47)


def bits_mask(bits):
    return BinaryMask(bits)


def test_write_reproduces_golden_bytes(tmp_path):
    write_labels([golden_label()], tmp_path)
    produced = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    frozen = sorted(p.relative_to(GOLDEN_DIR) for p in GOLDEN_DIR.rglob("*") if p.is_file())
    assert produced == frozen
    for rel in frozen:
        assert (tmp_path / rel).read_bytes() == (GOLDEN_DIR / rel).read_bytes(), rel


def test_golden_files_read_back():
    (label,) = read_labels(GOLDEN_DIR)
    want = golden_label()
    assert np.array_equal(label.semantic.bits, want.semantic.bits)
    assert label.provenance == want.provenance
    assert label.angle == want.angle
    assert [i.bbox for i in label.instances] == [(1, 1, 5, 4), (8, 7, 9, 8)]
