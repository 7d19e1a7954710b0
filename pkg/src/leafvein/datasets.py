"""Line parsers and writers for common scene-text annotation formats.

Supported layouts, one instance per line:

* quadrilateral: ``x1,y1,x2,y2,x3,y3,x4,y4,transcription``
* rotated box: ``index difficulty x y w h theta`` (theta in radians,
  rotation about the box center)
* polyline: ``x1,y1,...,xn,yn[,transcription]``

Every parser either returns an :class:`Annotation` or raises
:class:`AnnotationParseError`; nothing else escapes, whatever the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from shapely.errors import ShapelyError

from .geometry import GeometryError, Polygon, rotate_points

IGNORE_MARKER = "###"
BOM = "\ufeff"


class AnnotationParseError(ValueError):
    """Malformed annotation line; ``line_no`` is 1-based."""

    def __init__(self, message: str, line_no: int = 1):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.reason = message


@dataclass(frozen=True)
class Annotation:
    polygon: Polygon
    transcription: str | None = None
    care: bool = True
    index: int | None = None


def _text(line, line_no: int) -> str:
    if isinstance(line, (bytes, bytearray, memoryview)):
        try:
            line = bytes(line).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise AnnotationParseError(f"not valid UTF-8 ({exc.reason})", line_no) from None
    if not isinstance(line, str):
        raise AnnotationParseError(f"expected text, got {type(line).__name__}", line_no)
    if line.startswith(BOM):
        line = line[1:]
    return line.rstrip("\r\n")


def _number(field: str, what: str, line_no: int) -> float:
    try:
        v = float(field)
    except ValueError:
        raise AnnotationParseError(f"{what} is not a number: {field[:40]!r}", line_no) from None
    if not math.isfinite(v):
        raise AnnotationParseError(f"{what} is not finite: {field[:40]!r}", line_no)
    return v


def _polygon(coords, line_no: int) -> Polygon:
    try:
        return Polygon(np.asarray(coords, dtype=float).reshape(-1, 2))
    except (GeometryError, ShapelyError) as exc:
        raise AnnotationParseError(str(exc), line_no) from None


def _fmt(v: float) -> str:
    # integral values print without a decimal point, the rest round-trip through repr
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def parse_icdar15(line, line_no: int = 1) -> Annotation:
    """Four corners and a transcription; ``###`` marks a do-not-care region.

    >>> parse_icdar15("0,0,10,0,10,5,0,5,hello").care
    True
    """
    text = _text(line, line_no)
    fields = text.split(",", 8)
    if len(fields) != 9:
        raise AnnotationParseError(f"expected 8 coordinates and a transcription, got {len(fields)} fields", line_no)
    coords = [_number(f, f"coordinate {i + 1}", line_no) for i, f in enumerate(fields[:8])]
    transcription = fields[8]
    return Annotation(_polygon(coords, line_no), transcription, transcription != IGNORE_MARKER)


def msra_corners(x: float, y: float, w: float, h: float, theta: float) -> np.ndarray:
    """Corners of the box ``(x, y, w, h)`` turned by ``theta`` radians about its center."""
    box = np.array([(x, y), (x + w, y), (x + w, y + h), (x, y + h)], dtype=float)
    return rotate_points(box, math.degrees(theta), (x + w / 2.0, y + h / 2.0))


def parse_msra(line, line_no: int = 1) -> Annotation:
    text = _text(line, line_no)
    fields = text.split()
    if len(fields) != 7:
        raise AnnotationParseError(f"expected 7 fields (index difficulty x y w h theta), got {len(fields)}", line_no)
    try:
        index, difficulty = int(fields[0]), int(fields[1])
    except ValueError:
        raise AnnotationParseError("index and difficulty must be integers", line_no) from None
    x, y, w, h, theta = (_number(f, name, line_no) for f, name in zip(fields[2:], ("x", "y", "w", "h", "theta")))
    if not (w > 0.0 and h > 0.0):
        raise AnnotationParseError(f"box size must be positive, got {w} x {h}", line_no)
    corners = msra_corners(x, y, w, h, theta)
    if not np.all(np.isfinite(corners)):
        raise AnnotationParseError("box corners overflow", line_no)
    return Annotation(_polygon(corners, line_no), None, difficulty == 0, index)


def parse_polyline_format(line, min_points: int, line_no: int = 1) -> Annotation:
    """Comma-separated vertex list with an optional trailing transcription.

    The leading run of numeric fields holds the coordinates. If that run has
    odd length its last field is taken as the start of the transcription,
    so a transcription may itself begin with a number but not with two.
    """
    if min_points < 3:
        raise ValueError(f"min_points must be at least 3, got {min_points}")
    text = _text(line, line_no)
    fields = text.split(",")
    k = 0
    while k < len(fields):
        try:
            if not math.isfinite(float(fields[k])):
                break
        except ValueError:
            break
        k += 1
    if k < len(fields) and k % 2:
        k -= 1
    if k == len(fields) and k % 2:
        raise AnnotationParseError(f"odd coordinate count {k}", line_no)
    if k < 2 * min_points:
        raise AnnotationParseError(f"need at least {min_points} points, got {k // 2}", line_no)
    coords = [float(f) for f in fields[:k]]
    transcription = ",".join(fields[k:]) if k < len(fields) else None
    return Annotation(_polygon(coords, line_no), transcription, transcription != IGNORE_MARKER)


def serialize_icdar15(ann: Annotation) -> str:
    if len(ann.polygon) != 4:
        raise ValueError(f"quadrilateral format needs 4 vertices, got {len(ann.polygon)}")
    text = ann.transcription if ann.transcription is not None else ("" if ann.care else IGNORE_MARKER)
    return ",".join(_fmt(v) for v in ann.polygon.vertices.ravel()) + "," + text


def serialize_msra(ann: Annotation, index: int | None = None) -> str:
    """Recover ``x y w h theta`` from the corner order produced by :func:`parse_msra`."""
    v = ann.polygon.vertices
    if len(v) != 4:
        raise ValueError(f"rotated-box format needs 4 vertices, got {len(v)}")
    w = float(np.hypot(*(v[1] - v[0])))
    h = float(np.hypot(*(v[3] - v[0])))
    theta = math.atan2(v[1, 1] - v[0, 1], v[1, 0] - v[0, 0])
    cx, cy = v.mean(axis=0)
    idx = index if index is not None else (ann.index if ann.index is not None else 0)
    fields = [str(idx), "0" if ann.care else "1"] + [_fmt(f) for f in (cx - w / 2.0, cy - h / 2.0, w, h, theta)]
    return " ".join(fields)


def serialize_polyline(ann: Annotation) -> str:
    out = ",".join(_fmt(v) for v in ann.polygon.vertices.ravel())
    if ann.transcription is not None:
        out += "," + ann.transcription
    return out


Parser = Callable[..., Annotation]

FORMATS: dict[str, Parser] = {
    "icdar15": parse_icdar15,
    "msra": parse_msra,
    "ctw1500": partial(parse_polyline_format, min_points=7),
    "totaltext": partial(parse_polyline_format, min_points=4),
}


def iter_annotations(path, fmt: str) -> Iterator[Annotation]:
    """Parse every non-blank line of ``path``; the file may start with a BOM."""
    try:
        parser = FORMATS[fmt]
    except KeyError:
        raise ValueError(f"unknown annotation format {fmt!r}; choose from {', '.join(FORMATS)}") from None
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        line_no = raw[: exc.start].count(b"\n") + 1
        raise AnnotationParseError(f"not valid UTF-8 ({exc.reason})", line_no) from None
    for n, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            yield parser(line, line_no=n)


def load_annotations(path, fmt: str) -> list[Annotation]:
    return list(iter_annotations(path, fmt))
