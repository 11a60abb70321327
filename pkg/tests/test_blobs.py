import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from edgetrack.blobs import BlobConfig, extract_detections, label_components
from edgetrack.core import FrameDims, border_distance
from edgetrack.errors import InvalidConfig
from helpers import flood_fill_components


def test_empty_mask():
    assert label_components(np.zeros((10, 10), bool)) == []
    assert extract_detections(np.zeros((10, 10), bool), BlobConfig()) == []


def test_two_separated_squares():
    m = np.zeros((10, 12), bool)
    m[1:4, 1:4] = True
    m[1:4, 5:8] = True
    comps = label_components(m)
    assert len(comps) == 2
    assert [(c.box.w, c.box.h, c.pixel_count) for c in comps] == [(3, 3, 9), (3, 3, 9)]


@pytest.mark.parametrize("connectivity, expected", [(8, 1), (4, 2)])
def test_diagonal_touching(connectivity, expected):
    m = np.array([[1, 0], [0, 1]], bool)
    assert len(label_components(m, connectivity)) == expected
    assert len(flood_fill_components(m, connectivity)) == expected


def _frame_with_blob(x, y, size=10, h=240, w=320):
    m = np.zeros((h, w), bool)
    m[y:y + size, x:x + size] = True
    return m


def test_centered_blob_passes_gates():
    cfg = BlobConfig(min_area=50, max_area=500, border_margin=8)
    dets = extract_detections(_frame_with_blob(155, 115), cfg, frame_index=4)
    assert len(dets) == 1
    assert dets[0].box.to_list() == [155, 115, 10, 10]
    assert dets[0].pixel_count == 100 and dets[0].frame_index == 4


def test_blob_touching_edge_suppressed():
    cfg = BlobConfig(min_area=50, max_area=500, border_margin=8)
    assert extract_detections(_frame_with_blob(0, 115), cfg) == []


def test_margin_boundary_is_inclusive():
    cfg = BlobConfig(min_area=50, max_area=500, border_margin=8)
    assert len(extract_detections(_frame_with_blob(8, 115), cfg)) == 1
    assert extract_detections(_frame_with_blob(7, 115), cfg) == []


def test_area_gate():
    cfg = BlobConfig(min_area=50, max_area=500)
    m = np.zeros((240, 320), bool)
    m[100:104, 100:110] = True  # 40 px
    assert extract_detections(m, cfg) == []
    big = _frame_with_blob(100, 100, size=23)  # 529 px
    assert extract_detections(big, cfg) == []


def test_detections_sorted_by_position():
    m = np.zeros((240, 320), bool)
    for x, y in [(200, 50), (50, 50), (100, 20)]:
        m[y:y + 12, x:x + 12] = True
    dets = extract_detections(m, BlobConfig())
    assert [(d.box.y, d.box.x) for d in dets] == [(20, 100), (50, 50), (50, 200)]


def test_bad_config():
    with pytest.raises(InvalidConfig):
        BlobConfig(connectivity=6)
    with pytest.raises(InvalidConfig):
        BlobConfig(min_area=10, max_area=5)


masks = arrays(bool, st.tuples(st.integers(1, 14), st.integers(1, 14)))


@settings(max_examples=150, deadline=None)
@given(mask=masks, connectivity=st.sampled_from([4, 8]))
def test_labeling_matches_flood_fill(mask, connectivity):
    ours = {frozenset(c.pixels()) for c in label_components(mask, connectivity)}
    oracle = set(flood_fill_components(mask, connectivity))
    assert ours == oracle
    # partition of the foreground
    union = set().union(*ours) if ours else set()
    assert union == set(zip(*np.nonzero(mask)))
    assert sum(len(c) for c in ours) == int(mask.sum())


@settings(max_examples=150, deadline=None)
@given(mask=masks, connectivity=st.sampled_from([4, 8]))
def test_labeling_independent_of_scan_order(mask, connectivity):
    # transposing changes the scan order; components must map onto each other
    direct = {frozenset(c.pixels()) for c in label_components(mask, connectivity)}
    swapped = {frozenset((y, x) for x, y in c.pixels()) for c in label_components(mask.T, connectivity)}
    assert direct == swapped


@settings(max_examples=100, deadline=None)
@given(mask=masks, lo=st.integers(1, 20), span=st.integers(0, 60), margin=st.integers(0, 4))
def test_detections_satisfy_gates(mask, lo, span, margin):
    cfg = BlobConfig(min_area=lo, max_area=lo + span, border_margin=margin)
    dims = FrameDims(mask.shape[1], mask.shape[0])
    dets = extract_detections(mask, cfg)
    for d in dets:
        assert cfg.min_area <= d.pixel_count <= cfg.max_area
        assert border_distance(d.box, dims) >= margin
    # nothing that passes both gates is dropped
    passing = [
        c for c in flood_fill_components(mask, 8)
        if lo <= len(c) <= lo + span
    ]
    boxes = []
    for c in passing:
        ys = [p[0] for p in c]
        xs = [p[1] for p in c]
        x1, y1 = min(xs), min(ys)
        x2, y2 = max(xs) + 1, max(ys) + 1
        if min(x1, y1, dims.width - x2, dims.height - y2) >= margin:
            boxes.append([x1, y1, x2 - x1, y2 - y1])
    assert sorted(d.box.to_list() for d in dets) == sorted(boxes)
