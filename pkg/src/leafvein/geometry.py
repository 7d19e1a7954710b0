"""Polygon primitives, rasterization, IoU, inward offsetting and ray casting.

Coordinates are image pixels: x grows to the right, y grows downward, and
pixel ``(col, row)`` covers the unit square ``[col, col+1) x [row, row+1)``
with its center at ``(col + 0.5, row + 0.5)``. Angles are degrees measured
from +x toward +y, so 90 degrees points down the image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon as ShapelyPolygon


class GeometryError(ValueError):
    pass


class InvalidPolygonError(GeometryError):
    pass


class ShrinkCollapseError(GeometryError):
    pass


class OutsidePolygonError(GeometryError):
    pass


class Point(NamedTuple):
    x: float
    y: float


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


class Polygon:
    """Closed simple contour, stored clockwise in image coordinates.

    Clockwise on screen (y down) is a positive shoelace sum. Counter-clockwise
    input is reversed on construction. The vertex array is read-only.
    """

    __slots__ = ("_vertices",)

    def __init__(self, vertices, *, check_simple: bool = True):
        arr = np.array(vertices, dtype=float).reshape(-1, 2) if len(vertices) else np.zeros((0, 2))
        if arr.shape[0] < 3:
            raise InvalidPolygonError(f"polygon needs at least 3 vertices, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise InvalidPolygonError("polygon coordinates must be finite")
        area = _signed_area(arr)
        if not abs(area) > 0.0:
            raise InvalidPolygonError("polygon has zero area")
        if area < 0:
            arr = arr[::-1].copy()
        if check_simple and not shapely.LinearRing(arr).is_simple:
            raise InvalidPolygonError("polygon is self-intersecting")
        arr.setflags(write=False)
        self._vertices = arr

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    def __len__(self) -> int:
        return self._vertices.shape[0]

    def __iter__(self):
        return (Point(float(x), float(y)) for x, y in self._vertices)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self._vertices, other._vertices)

    def __hash__(self) -> int:
        return hash(self._vertices.tobytes())

    def __repr__(self) -> str:
        return f"Polygon({self._vertices.tolist()!r})"

    @property
    def area(self) -> float:
        return polygon_area(self)

    @property
    def perimeter(self) -> float:
        d = np.diff(self._vertices, axis=0, append=self._vertices[:1])
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    def bounds(self) -> tuple[float, float, float, float]:
        lo = self._vertices.min(axis=0)
        hi = self._vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def contains(self, points) -> np.ndarray | bool:
        """Even-odd test; points on an edge may fall either way."""
        pts = np.asarray(points, dtype=float)
        scalar = pts.ndim == 1
        inside = points_in_polygon(pts.reshape(-1, 2), self._vertices)
        return bool(inside[0]) if scalar else inside

    def to_shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self._vertices)


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Vectorized even-odd crossing test of many points against one ring."""
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    x1, y1 = vertices[:, 0], vertices[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    straddle = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    hits = straddle & (px < x_cross)
    return (hits.sum(axis=1) % 2) == 1


def polygon_area(poly: Polygon | Sequence) -> float:
    verts = poly.vertices if isinstance(poly, Polygon) else np.asarray(poly, dtype=float)
    if verts.ndim != 2 or verts.shape[0] < 3:
        raise InvalidPolygonError("polygon needs at least 3 vertices")
    return abs(_signed_area(verts))


@dataclass(frozen=True, eq=False)
class RasterMask:
    """Binary occupancy grid; ``bits[row, col]``, row-major."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("mask bits must be a 2-D grid")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, width: int, height: int) -> "RasterMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def coordinates(self) -> np.ndarray:
        """(N, 2) integer array of set pixels as (col, row), row-major order."""
        cached = self.__dict__.get("_coords")
        if cached is None:
            rows, cols = np.nonzero(self.bits)
            cached = np.stack([cols, rows], axis=1)
            cached.setflags(write=False)
            object.__setattr__(self, "_coords", cached)
        return cached

    def __contains__(self, point) -> bool:
        col, row = int(np.floor(point[0])), int(np.floor(point[1]))
        return 0 <= col < self.width and 0 <= row < self.height and bool(self.bits[row, col])

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Membership of continuous points (pixel containing each point)."""
        pts = np.floor(np.asarray(points, dtype=float)).astype(np.int64)
        cols, rows = pts[:, 0], pts[:, 1]
        ok = (cols >= 0) & (cols < self.width) & (rows >= 0) & (rows < self.height)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = self.bits[rows[ok], cols[ok]]
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, RasterMask) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.bits.shape, self.bits.tobytes()))


def rasterize_vertices(vertices: np.ndarray, width: int, height: int) -> RasterMask:
    """Scanline fill of a closed ring by the even-odd rule at pixel centers.

    Accepts any closed ring, including self-touching reconstructions.
    """
    if width < 1 or height < 1:
        raise ValueError("canvas must be at least 1x1")
    verts = np.asarray(vertices, dtype=float)
    bits = np.zeros((height, width), dtype=bool)
    ys = verts[:, 1]
    row_lo = max(0, int(np.floor(ys.min() - 0.5)))
    row_hi = min(height - 1, int(np.ceil(ys.max() - 0.5)))
    if row_lo > row_hi:
        return RasterMask(bits)
    centers_y = np.arange(row_lo, row_hi + 1) + 0.5
    x1, y1 = verts[:, 0], verts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    cy = centers_y[:, None]
    # half-open rule so shared vertices are counted once
    straddle = (y1 <= cy) != (y2 <= cy)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = x1 + (cy - y1) * (x2 - x1) / (y2 - y1)
    xs = np.where(straddle, xs, np.inf)
    xs.sort(axis=1)
    for r, row_xs in enumerate(xs):
        crossings = row_xs[np.isfinite(row_xs)]
        for a, b in zip(crossings[0::2], crossings[1::2]):
            # centers c = col + 0.5 with a <= c < b
            c0 = max(0, int(np.ceil(a - 0.5)))
            c1 = min(width, int(np.ceil(b - 0.5)))
            if c1 > c0:
                bits[row_lo + r, c0:c1] = True
    return RasterMask(bits)


def rasterize(poly: Polygon, width: int, height: int) -> RasterMask:
    if not isinstance(poly, Polygon):
        raise InvalidPolygonError("rasterize expects a Polygon")
    return rasterize_vertices(poly.vertices, width, height)


def mask_iou(a: RasterMask, b: RasterMask) -> float:
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask dimensions differ: {a.bits.shape} vs {b.bits.shape}")
    union = np.logical_or(a.bits, b.bits).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a.bits, b.bits).sum() / union)


def shrink_distance(poly: Polygon, ratio: float) -> float:
    """Inward offset d = A (1 - r^2) / L used for kernel generation."""
    return poly.area * (1.0 - ratio * ratio) / poly.perimeter


def shrink_polygon(poly: Polygon, ratio: float) -> Polygon:
    """Inward mitre offset of ``poly`` by :func:`shrink_distance`.

    If the offset splits the shape, the largest piece is returned.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"shrink ratio must be in (0, 1], got {ratio}")
    d = shrink_distance(poly, ratio)
    if d <= 0.0:
        return poly
    shrunk = poly.to_shapely().buffer(-d, join_style="mitre")
    if shrunk.is_empty:
        raise ShrinkCollapseError(f"offset by {d:.3f}px collapses the polygon")
    if shrunk.geom_type == "MultiPolygon":
        shrunk = max(shrunk.geoms, key=lambda g: g.area)
    coords = np.asarray(shrunk.exterior.coords)[:-1]
    try:
        return Polygon(coords)
    except InvalidPolygonError as exc:
        raise ShrinkCollapseError(f"offset by {d:.3f}px leaves a degenerate ring") from exc


def direction_vectors(angles_deg) -> np.ndarray:
    rad = np.deg2rad(np.asarray(angles_deg, dtype=float))
    return np.stack([np.cos(rad), np.sin(rad)], axis=-1)


def ray_distances(origins: np.ndarray, angles_deg, vertices: np.ndarray) -> np.ndarray:
    """Distance along each ray to the first edge crossing, ``inf`` if none.

    Rays are ``origins[i] + t * (cos a_i, sin a_i)`` with ``t > 0``.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 2)
    d = direction_vectors(angles_deg).reshape(-1, 2)
    a = np.asarray(vertices, dtype=float)
    e = np.roll(a, -1, axis=0) - a
    # solve o + t d = a + s e  for every (ray, edge) pair
    w = a[None, :, :] - o[:, None, :]
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / denom
        s = (w[..., 0] * d[:, None, 1] - w[..., 1] * d[:, None, 0]) / denom
    ok = (denom != 0) & (t > 1e-12) & (s >= 0.0) & (s <= 1.0)
    t = np.where(ok, t, np.inf)
    return t.min(axis=1)


def ray_to_contour_distance(origin, angle: float, poly: Polygon) -> float:
    """Euclidean distance from an interior ``origin`` to the contour along ``angle``."""
    pt = np.asarray(origin, dtype=float)
    if not poly.contains(pt):
        raise OutsidePolygonError(f"ray origin {tuple(pt)} is not inside the polygon")
    dist = float(ray_distances(pt[None], [angle], poly.vertices)[0])
    if not np.isfinite(dist):
        raise GeometryError("ray from an interior point did not meet the contour")
    return dist


def rotate_points(points: np.ndarray, angle_deg: float, origin) -> np.ndarray:
    """Rotate by ``angle_deg`` (image convention) about ``origin``."""
    rad = np.deg2rad(angle_deg)
    c, s = np.cos(rad), np.sin(rad)
    o = np.asarray(origin, dtype=float)
    rel = np.asarray(points, dtype=float) - o
    return np.stack([c * rel[..., 0] - s * rel[..., 1], s * rel[..., 0] + c * rel[..., 1]], axis=-1) + o


def wrap_degrees(angle):
    """Map to [0, 360)."""
    out = np.mod(angle, 360.0)
    # np.mod(-1e-15, 360.0) rounds up to 360.0
    out = np.where(out >= 360.0, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PolarGrid:
    """``m`` uniformly spaced directions starting at 0 degrees."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 4:
            raise ValueError(f"polar grid needs m >= 4 directions, got {self.m}")

    @property
    def step(self) -> float:
        return 360.0 / self.m

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.m) * self.step

    def angle(self, index: int) -> float:
        return (index % self.m) * self.step
