import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from leafvein.datasets import (
    FORMATS,
    Annotation,
    AnnotationParseError,
    load_annotations,
    msra_corners,
    parse_icdar15,
    parse_msra,
    parse_polyline_format,
    serialize_icdar15,
    serialize_msra,
    serialize_polyline,
)
from leafvein.geometry import Polygon


def corner_set(v, digits=6):
    return sorted((round(x, digits), round(y, digits)) for x, y in np.asarray(v).tolist())


def test_icdar15_examples():
    a = parse_icdar15("0,0,10,0,10,5,0,5,hello")
    assert a.care and a.transcription == "hello"
    assert corner_set(a.polygon.vertices) == corner_set([(0, 0), (10, 0), (10, 5), (0, 5)])
    assert not parse_icdar15("0,0,10,0,10,5,0,5,###").care
    with pytest.raises(AnnotationParseError) as err:
        parse_icdar15("0,0,10,0,banana", line_no=7)
    assert err.value.line_no == 7 and "line 7" in str(err.value)


def test_icdar15_transcription_may_hold_commas_and_bom():
    a = parse_icdar15("﻿0,0,10,0,10,5,0,5,a,b\r\n")
    assert a.transcription == "a,b"


def test_msra_zero_rotation():
    a = parse_msra("3 0 10 20 30 8 0")
    assert corner_set(a.polygon.vertices) == corner_set([(10, 20), (40, 20), (40, 28), (10, 28)])
    assert a.index == 3 and a.care
    assert not parse_msra("3 1 10 20 30 8 0").care


def test_msra_square_quarter_turn_same_footprint():
    a = parse_msra(f"0 0 5 5 10 10 {math.pi / 2}")
    assert corner_set(a.polygon.vertices, 6) == corner_set([(5, 5), (15, 5), (15, 15), (5, 15)], 6)


def test_msra_matches_rotation_oracle():
    r = random.Random(12)
    for _ in range(200):
        x, y, w, h = r.uniform(-50, 500), r.uniform(-50, 500), r.uniform(1, 300), r.uniform(1, 80)
        theta = r.uniform(-math.pi, math.pi)
        got = np.asarray(msra_corners(x, y, w, h, theta))
        want = np.asarray(oracles.box_corners(x, y, w, h, theta))
        assert np.allclose(got, want, atol=1e-6)
        parsed = parse_msra(f"0 0 {x!r} {y!r} {w!r} {h!r} {theta!r}")
        assert corner_set(parsed.polygon.vertices, 5) == corner_set(want, 5)


def test_msra_errors():
    for bad in ("1 0 1 2 3 4", "a 0 1 2 3 4 0", "1 0 1 2 -3 4 0", "1 0 1 2 3 4 nan"):
        with pytest.raises(AnnotationParseError):
            parse_msra(bad)


def test_polyline_fourteen_coordinates():
    coords = [10, 10, 30, 8, 50, 10, 70, 12, 70, 30, 40, 32, 10, 30]
    a = parse_polyline_format(",".join(map(str, coords)), min_points=7)
    assert len(a.polygon) == 7 and a.transcription is None


def test_polyline_counter_clockwise_becomes_clockwise():
    ccw = [(0, 0), (0, 10), (10, 10), (10, 0)]
    a = parse_polyline_format(",".join(f"{x},{y}" for x, y in ccw), min_points=4)
    v = a.polygon.vertices
    signed = sum(v[i, 0] * v[(i + 1) % 4, 1] - v[(i + 1) % 4, 0] * v[i, 1] for i in range(4))
    assert signed > 0
    assert corner_set(v) == corner_set(ccw)


def test_polyline_transcription_rules():
    a = parse_polyline_format("0,0,10,0,10,5,0,5,7,up", min_points=4)
    assert len(a.polygon) == 4 and a.transcription == "7,up"
    assert not parse_polyline_format("0,0,10,0,10,5,0,5,###", min_points=4).care
    with pytest.raises(AnnotationParseError):
        parse_polyline_format("0,0,10,0,10,5,0,5,3", min_points=4)
    with pytest.raises(AnnotationParseError):
        parse_polyline_format("0,0,10,0,10,5", min_points=4)
    with pytest.raises(ValueError):
        parse_polyline_format("0,0,1,1,2,0", min_points=2)


def test_self_intersecting_polygon_is_a_parse_error():
    with pytest.raises(AnnotationParseError):
        parse_icdar15("0,0,10,10,10,0,0,10,x")


def random_polygon_annotation(r, n, text):
    return Annotation(Polygon(oracles.star_polygon(r, n)), text, text != "###")


def test_serialize_parse_identity():
    r = random.Random(21)
    for _ in range(100):
        quad = random_polygon_annotation(r, 4, r.choice(["word", "###", "a,b"]))
        back = parse_icdar15(serialize_icdar15(quad))
        assert np.array_equal(back.polygon.vertices, quad.polygon.vertices)
        assert (back.transcription, back.care) == (quad.transcription, quad.care)

        poly = random_polygon_annotation(r, r.randint(7, 16), r.choice([None, "txt", "###"]))
        back = parse_polyline_format(serialize_polyline(poly), min_points=7)
        assert np.array_equal(back.polygon.vertices, poly.polygon.vertices)
        assert back.transcription == poly.transcription


def test_msra_parse_serialize_parse():
    r = random.Random(5)
    for i in range(100):
        line = f"{i} {r.randint(0, 1)} {r.uniform(0, 400)!r} {r.uniform(0, 400)!r} {r.uniform(2, 200)!r} {r.uniform(2, 60)!r} {r.uniform(-3, 3)!r}"
        a = parse_msra(line)
        b = parse_msra(serialize_msra(a))
        assert np.allclose(a.polygon.vertices, b.polygon.vertices, atol=1e-9)
        assert (a.care, a.index) == (b.care, b.index)


@pytest.mark.parametrize("fmt", sorted(FORMATS))
@given(data=st.one_of(st.binary(max_size=120), st.text(max_size=120)))
def test_parsers_never_crash(fmt, data):
    try:
        result = FORMATS[fmt](data)
    except AnnotationParseError:
        return
    assert isinstance(result, Annotation)


@given(st.lists(st.floats(-1e3, 1e3), min_size=8, max_size=8), st.text(alphabet="abc#, ", max_size=8))
def test_icdar15_structured_fuzz(coords, text):
    line = ",".join(repr(c) for c in coords) + "," + text
    try:
        a = parse_icdar15(line)
    except AnnotationParseError:
        return
    b = parse_icdar15(serialize_icdar15(a))
    assert np.array_equal(b.polygon.vertices, a.polygon.vertices)
    assert (b.transcription, b.care) == (a.transcription, a.care)


def test_load_file_with_bom_and_blank_lines(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_bytes("﻿0,0,10,0,10,5,0,5,a\n\n20,20,30,20,30,25,20,25,###\n".encode())
    anns = load_annotations(p, "icdar15")
    assert [a.care for a in anns] == [True, False]


def test_load_file_reports_line_number(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("0,0,10,0,10,5,0,5,a\n\n1,2,3\n")
    with pytest.raises(AnnotationParseError) as err:
        load_annotations(p, "icdar15")
    assert err.value.line_no == 3
    p.write_bytes(b"0,0,10,0,10,5,0,5,a\n\xff\xfe\n")
    with pytest.raises(AnnotationParseError) as err:
        load_annotations(p, "icdar15")
    assert err.value.line_no == 2
    with pytest.raises(ValueError):
        load_annotations(p, "coco")
