import math

import numpy as np
import pytest

from bloomseg.augment import AngleSet, sample_angles
from bloomseg.errors import DataError
from bloomseg.pseudolabel import (
    InstanceAnnotation,
    LabelProvenance,
    PanopticPseudoLabel,
    connected_components,
    from_mask,
    instances_from_mask,
    read_labels,
    to_panoptic,
    write_labels,
)
from bloomseg.raster import BinaryMask
from tests._helpers import flood_fill_components

RIGHT_ANGLES = AngleSet((0.0, math.pi / 2, math.pi, 3 * math.pi / 2), seed=0)
PROV = LabelProvenance("img-000", 3, 0, 1)


def comp_pixel_sets(comps):
    return [tuple(sorted(map(tuple, c.tolist()))) for c in comps]


def test_components_empty():
    assert connected_components(BinaryMask(np.zeros((5, 5), bool))) == []


def test_components_diagonal_touch():
    bits = np.zeros((4, 4), dtype=bool)
    bits[0, 0] = bits[1, 1] = True
    assert len(connected_components(BinaryMask(bits), 8)) == 1
    assert len(connected_components(BinaryMask(bits), 4)) == 2


@pytest.mark.parametrize("connectivity", [4, 8])
def test_components_match_flood_fill(rng, connectivity):
    for _ in range(200):
        bits = rng.random((32, 32)) < rng.uniform(0.2, 0.8)
        got = comp_pixel_sets(connected_components(BinaryMask(bits), connectivity))
        want = flood_fill_components(bits, connectivity)
        assert got == want


def test_components_ordering():
    bits = np.zeros((6, 6), dtype=bool)
    bits[4:6, 0:2] = True   # lower-left blob
    bits[0:2, 4:6] = True   # upper-right blob
    comps = connected_components(BinaryMask(bits))
    assert comps[0][:, 0].min() == 0   # upper blob first (smaller y_min)
    assert comps[1][:, 0].min() == 4


def test_instances_tight_bbox(rng):
    bits = np.zeros((10, 10), dtype=bool)
    bits[2:5, 3:7] = True
    (inst,) = instances_from_mask(BinaryMask(bits))
    assert inst.bbox == (3, 2, 6, 4)
    assert inst.mask.bits.all()
    # every produced instance touches all four bbox sides, so shrinking any
    # side by one pixel would exclude at least one true pixel
    for _ in range(50):
        blob = rng.random((12, 12)) < 0.3
        for got in instances_from_mask(BinaryMask(blob)):
            b = got.mask.bits
            assert b[0].any() and b[-1].any() and b[:, 0].any() and b[:, -1].any()
    # a loose bbox is rejected outright
    loose = np.zeros((4, 5), dtype=bool)
    loose[1:3, 1:4] = True
    with pytest.raises(DataError):
        InstanceAnnotation((0, 0, 4, 3), BinaryMask(loose))


def test_min_area_filter():
    bits = np.zeros((8, 8), dtype=bool)
    bits[0, 0] = True
    bits[4:7, 4:7] = True
    assert len(instances_from_mask(BinaryMask(bits))) == 2
    assert len(instances_from_mask(BinaryMask(bits), min_area=2)) == 1


def test_to_panoptic_empty_mask():
    labels = to_panoptic(BinaryMask(np.zeros((6, 6), bool)), RIGHT_ANGLES, "im", 0, 2)
    assert len(labels) == 4
    assert all(len(lb.instances) == 0 for lb in labels)
    assert [lb.provenance.rotation for lb in labels] == [0, 1, 2, 3]
    assert all(lb.provenance.iteration == 2 for lb in labels)


def test_to_panoptic_single_square():
    bits = np.zeros((7, 7), dtype=bool)
    bits[2:5, 2:5] = True
    labels = to_panoptic(BinaryMask(bits), AngleSet((0.0,), seed=0), "im", 0, 0)
    (label,) = labels
    assert len(label.instances) == 1
    assert label.instances[0].bbox == (2, 2, 4, 4)
    assert label.instances[0].mask.count() == 9


def test_to_panoptic_right_angle_rotates_instances():
    bits = np.zeros((8, 10), dtype=bool)
    bits[1:3, 1:4] = True
    bits[5:7, 6:9] = True
    labels = to_panoptic(BinaryMask(bits), RIGHT_ANGLES, "im", 1, 0)
    for lb in labels:
        assert len(lb.instances) == 2
    quarter = labels[1]
    rot_bits = np.rot90(bits, 1)
    expect = instances_from_mask(BinaryMask(rot_bits))
    assert [i.bbox for i in quarter.instances] == [i.bbox for i in expect]


def test_component_count_stable_under_right_angles(rng):
    for _ in range(20):
        bits = rng.random((12, 15)) < 0.4
        base = len(connected_components(BinaryMask(bits)))
        for k in range(4):
            rotated = np.rot90(bits, k)
            assert len(connected_components(BinaryMask(rotated))) == base


def test_partition_invariant_enforced():
    bits = np.zeros((5, 5), dtype=bool)
    bits[1:3, 1:3] = True
    good = from_mask(BinaryMask(bits), PROV)
    assert good.semantic.count() == 4
    with pytest.raises(DataError):
        PanopticPseudoLabel(BinaryMask(bits), (), PROV)  # missing instance


def test_write_read_round_trip(tmp_path, rng):
    angles = sample_angles(3, 5)
    bits = rng.random((14, 14)) < 0.3
    labels = to_panoptic(BinaryMask(bits), angles, "img-007", 4, 2)
    write_labels(labels, tmp_path / "labels")
    back = read_labels(tmp_path / "labels")
    assert len(back) == len(labels)
    by_key = {(b.provenance.sample_id, b.provenance.window, b.provenance.rotation): b for b in back}
    for lb in labels:
        got = by_key[(lb.provenance.sample_id, lb.provenance.window, lb.provenance.rotation)]
        assert np.array_equal(got.semantic.bits, lb.semantic.bits)
        assert got.provenance == lb.provenance
        assert got.angle == lb.angle
        assert len(got.instances) == len(lb.instances)
        for a, b in zip(got.instances, lb.instances):
            assert a.bbox == b.bbox
            assert np.array_equal(a.mask.bits, b.mask.bits)


def test_instance_map_values(tmp_path):
    bits = np.zeros((9, 9), dtype=bool)
    bits[0:2, 0:2] = True
    bits[4:6, 4:6] = True
    bits[7:9, 0:2] = True
    label = from_mask(BinaryMask(bits), PROV)
    write_labels([label], tmp_path)
    from PIL import Image

    arr = np.asarray(Image.open(tmp_path / "img-000_3_0" / "instances.png"))
    assert set(np.unique(arr).tolist()) == {0, 1, 2, 3}


def test_read_labels_reports_malformed(tmp_path):
    bits = np.zeros((5, 5), dtype=bool)
    bits[1, 1] = True
    write_labels([from_mask(BinaryMask(bits), PROV)], tmp_path)
    meta = tmp_path / "img-000_3_0" / "meta.json"
    meta.write_text("{not json")
    with pytest.raises(DataError) as exc:
        read_labels(tmp_path)
    assert "meta.json" in str(exc.value)

    write_labels([from_mask(BinaryMask(bits), PROV)], tmp_path)
    (tmp_path / "img-000_3_0" / "semantic.png").unlink()
    with pytest.raises(DataError) as exc:
        read_labels(tmp_path)
    assert "semantic.png" in str(exc.value)


def test_read_labels_missing_dir(tmp_path):
    with pytest.raises(DataError):
        read_labels(tmp_path / "nope")
