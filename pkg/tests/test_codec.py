import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from leafvein.codec import (
    CodecError,
    EmptyKernelInputError,
    EncodeDegenerateError,
    LengthMap,
    LengthRecord,
    MissingLengthError,
    decode,
    dumps_label_document,
    encode,
    instance_from_dict,
    kernel_from_rle,
    kernel_to_rle,
    label_document,
    loads_label_document,
    roundtrip_iou,
    split_instances,
)
from leafvein.config import LvtConfig
from leafvein.geometry import InvalidPolygonError, Polygon, RasterMask, mask_iou, rasterize, rasterize_vertices, rotate_points

CANVAS = (512, 512)
CFG = LvtConfig(n_d=8, n_p=5)


def rect(x0, y0, w, h):
    return Polygon([(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)])


def rotated(length, thickness, angle, center=(256.0, 256.0)):
    c = np.array([(-length / 2, -thickness / 2), (length / 2, -thickness / 2), (length / 2, thickness / 2), (-length / 2, thickness / 2)])
    return Polygon(rotate_points(c, angle, (0.0, 0.0)) + center)


def test_horizontal_rect_up_lengths():
    label = encode(rect(100, 200, 200, 60), CFG, CANVAS)
    ups = [lat.len_up for lat in label.veins.laterals if lat.rect_up == 270.0]
    assert len(ups) >= 3
    assert all(abs(v - 30.0) <= 0.5 for v in ups)


def test_diagonal_rect_lateral_directions():
    label = encode(rotated(240, 50, 45.0), CFG, CANVAS)
    inner = label.veins.laterals[1:-1]
    assert {lat.rect_up for lat in inner} | {lat.rect_down for lat in inner} == {135.0, 315.0}


def test_tiny_polygon_is_degenerate():
    with pytest.raises(EncodeDegenerateError):
        encode(Polygon([(10, 10), (11.5, 10), (10, 11.5)]), CFG, CANVAS)


def test_zero_area_triangle_rejected():
    with pytest.raises(InvalidPolygonError):
        encode(Polygon([(0, 0), (5, 5), (10, 10)]), CFG, CANVAS)


def test_square_roundtrip():
    assert roundtrip_iou(rect(100, 100, 120, 120), CFG, CANVAS) >= 0.97


def test_decode_scaled_lengths_grow_area():
    label = encode(rect(150, 200, 200, 60), CFG, CANVAS)
    small = decode(label.kernel, lambda p, k: 12.0, CFG)
    big = decode(label.kernel, lambda p, k: 24.0, CFG)
    assert rasterize_vertices(big.vertices, *CANVAS).count > rasterize_vertices(small.vertices, *CANVAS).count


def test_decode_empty_kernel():
    with pytest.raises(EmptyKernelInputError):
        decode(RasterMask.empty(64, 64), LengthMap(8), CFG)


def test_decode_accepts_callable_lengths():
    label = encode(rect(100, 100, 200, 60), CFG, CANVAS)
    a = decode(label.kernel, label.lengths, CFG)
    b = decode(label.kernel, lambda p, k: label.lengths.lookup(p, k), CFG)
    assert np.array_equal(a.vertices, b.vertices)


def test_decode_missing_length():
    label = encode(rect(100, 100, 200, 60), CFG, CANVAS)
    with pytest.raises(MissingLengthError):
        decode(label.kernel, LengthMap(8), CFG)


def test_translation_invariance():
    a = roundtrip_iou(rotated(220, 40, 20.0, (200.0, 220.0)), CFG, CANVAS)
    b = roundtrip_iou(rotated(220, 40, 20.0, (300.0, 290.0)), CFG, CANVAS)
    assert abs(a - b) <= 0.01


@settings(max_examples=30)
@given(st.floats(0, 360), st.floats(80, 300), st.floats(16, 60))
def test_rect_roundtrip_stays_high(angle, length, thickness):
    poly = rotated(max(length, thickness * 1.2), thickness, angle)
    assert roundtrip_iou(poly, CFG, CANVAS) >= 0.85


def test_contour_vertices_lie_on_polygon_for_rect():
    poly = rect(100, 150, 260, 70)
    label = encode(poly, CFG, CANVAS)
    contour = decode(label.kernel, label.lengths, CFG).vertices
    ring = poly.to_shapely().exterior
    assert max(ring.distance(shapely.Point(p)) for p in contour) < 1.0


def test_length_map_keeps_first_value():
    table = LengthMap(4)
    assert table.put((3.2, 4.9), 1, 7.0) == 7.0
    assert table.put((3.9, 4.1), 1, 9.0) == 7.0
    assert table.conflicts == 1
    assert table.lookup((3.0, 4.0), 1) == 7.0
    assert len(table) == 1
    with pytest.raises(CodecError):
        LengthMap(4, [LengthRecord(0, 0, (1.0, 2.0))])


def test_split_instances():
    bits = np.zeros((20, 20), bool)
    bits[2:5, 2:5] = True
    bits[10:15, 10:12] = True
    bits[5, 5] = True  # diagonal neighbour joins the first blob
    parts = split_instances(RasterMask(bits))
    assert sorted(p.count for p in parts) == [10, 10]


@given(st.integers(0, 2**32 - 1))
def test_rle_roundtrip(seed):
    g = np.random.default_rng(seed)
    mask = RasterMask(g.random((int(g.integers(1, 20)), int(g.integers(1, 20)))) < 0.4)
    assert kernel_from_rle(kernel_to_rle(mask)) == mask


def test_rle_rejects_bad_runs():
    with pytest.raises(CodecError):
        kernel_from_rle({"width": 4, "height": 1, "rows": [[2, 5]]})
    with pytest.raises(CodecError):
        kernel_from_rle({"width": 4, "height": 2, "rows": [[0, 1]]})


def test_label_document_roundtrip():
    poly = rect(100, 100, 200, 60)
    label = encode(poly, CFG, CANVAS)
    text = dumps_label_document(label_document("img", [label], CFG.n_d))
    doc = loads_label_document(text)
    assert doc["image_id"] == "img"
    p2, kernel, lengths = instance_from_dict(doc["instances"][0], CFG.n_d)
    assert kernel == label.kernel
    a = decode(label.kernel, label.lengths, CFG).vertices
    b = decode(kernel, lengths, CFG).vertices
    assert np.allclose(a, b)
    assert oracles.shoelace(p2.vertices) == pytest.approx(poly.area)


def test_roundtrip_iou_matches_manual_pipeline():
    poly = rotated(200, 36, 33.0)
    label = encode(poly, CFG, CANVAS)
    contour = decode(label.kernel, label.lengths, CFG)
    manual = mask_iou(rasterize(poly, *CANVAS), rasterize_vertices(contour.vertices, *CANVAS))
    assert roundtrip_iou(poly, CFG, CANVAS) == manual
