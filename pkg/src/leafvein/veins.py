"""Lateral and thin vein directions, lengths, and contour assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import (
    GeometryError,
    OutsidePolygonError,
    Point,
    PolarGrid,
    Polygon,
    direction_vectors,
    ray_distances,
    wrap_degrees,
)
from .mainvein import StartPointSample

UP, DOWN = "up", "down"

#: measure(points (k, 2), direction indices (k,), m) -> lengths (k,); NaN = no vein
Measure = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def lateral_directions(phi: float) -> tuple[float, float]:
    """Potential up/down growth directions for a tangent angle ``phi``.

    The two branches of each case follow the tangent range; the results are
    finally wrapped so that ``phi == 90`` gives 0 rather than 360.
    """
    up = phi - 90.0 if phi > 90.0 else phi - 90.0 + 360.0
    down = phi + 90.0 if phi <= 270.0 else phi + 90.0 - 360.0
    return wrap_degrees(up), wrap_degrees(down)


def rectify_index(alpha: float, grid: PolarGrid) -> int:
    """Index of the rectified grid direction for ``alpha`` in [0, 360).

    With ``a_m <= alpha <= a_{m+1}`` the upper neighbour wins only when it is
    strictly closer; a tie keeps ``a_m``.
    """
    step = grid.step
    m = int(np.floor(alpha / step))
    m = min(max(m, 0), grid.m - 1)
    lower = m * step
    upper = (m + 1) * step
    sigma1 = abs(upper - alpha)
    sigma2 = abs(alpha - lower)
    return (m + 1) % grid.m if sigma1 < sigma2 else m


def rectify_direction(alpha: float, grid: PolarGrid) -> float:
    return grid.angle(rectify_index(wrap_degrees(alpha), grid))


def thin_directions(rect_prev: float, rect_next: float) -> tuple[float, float]:
    """(right thin of lateral i, left thin of lateral i+1): each takes its neighbour's direction."""
    return rect_next, rect_prev


@dataclass(frozen=True)
class LateralVeinPair:
    start: Point
    potential_up: float
    potential_down: float
    rect_up: float
    rect_down: float
    len_up: float
    len_down: float

    def endpoint(self, side: str) -> Point:
        angle, length = (self.rect_up, self.len_up) if side == UP else (self.rect_down, self.len_down)
        v = direction_vectors(angle)
        return Point(self.start.x + length * float(v[0]), self.start.y + length * float(v[1]))

    def midpoint(self, side: str) -> Point:
        angle, length = (self.rect_up, self.len_up) if side == UP else (self.rect_down, self.len_down)
        v = direction_vectors(angle)
        return Point(self.start.x + 0.5 * length * float(v[0]), self.start.y + 0.5 * length * float(v[1]))


@dataclass(frozen=True)
class ThinVein:
    """Thin vein grown from the midpoint of lateral ``parent`` on ``side``.

    ``kind`` is ``"l"`` (toward the previous lateral) or ``"r"`` (toward the next).
    """

    start: Point
    direction: float
    length: float
    side: str
    parent: int
    kind: str

    @property
    def endpoint(self) -> Point:
        v = direction_vectors(self.direction)
        return Point(self.start.x + self.length * float(v[0]), self.start.y + self.length * float(v[1]))


@dataclass(frozen=True)
class VeinSet:
    laterals: list[LateralVeinPair]
    thins: list[ThinVein]
    skipped: list[tuple[str, int, str]] = field(default_factory=list)
    ends: list[ThinVein] = field(default_factory=list)

    def contour(self) -> np.ndarray:
        """Vein endpoints in clockwise order.

        Up side in increasing main-vein order, each lateral endpoint flanked
        by its left and right thin endpoints; then the down side reversed.
        End veins, when present, close the two caps.
        """
        by_key = {(t.side, t.parent, t.kind): t.endpoint for t in self.thins}
        n = len(self.laterals)
        up: list[Point] = []
        for i, lat in enumerate(self.laterals):
            if (UP, i, "l") in by_key:
                up.append(by_key[(UP, i, "l")])
            up.append(lat.endpoint(UP))
            if (UP, i, "r") in by_key:
                up.append(by_key[(UP, i, "r")])
        down: list[Point] = []
        for i in range(n - 1, -1, -1):
            lat = self.laterals[i]
            if (DOWN, i, "r") in by_key:
                down.append(by_key[(DOWN, i, "r")])
            down.append(lat.endpoint(DOWN))
            if (DOWN, i, "l") in by_key:
                down.append(by_key[(DOWN, i, "l")])
        end_lo = [e.endpoint for e in self.ends if e.kind == "l"]
        end_hi = [e.endpoint for e in self.ends if e.kind == "r"]
        return np.array(up + end_hi + down + end_lo, dtype=float)

    def segments(self) -> dict[str, list[tuple[Point, Point]]]:
        lateral = [(lat.start, lat.endpoint(s)) for lat in self.laterals for s in (UP, DOWN)]
        thin = [(t.start, t.endpoint) for t in self.thins]
        end = [(e.start, e.endpoint) for e in self.ends]
        return {"lateral": lateral, "thin": thin, "end": end}


def polygon_measure(poly: Polygon) -> Measure:
    """Ray-cast lengths against ``poly``; origins outside it measure NaN."""

    def measure(points: np.ndarray, indices: np.ndarray, grid_m: int) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        angles = np.asarray(indices) * (360.0 / grid_m)
        out = np.full(len(points), np.nan)
        inside = poly.contains(points)
        if inside.any():
            out[inside] = ray_distances(points[inside], angles[inside], poly.vertices)
        return out

    return measure


def grow_with(
    starts: Sequence[StartPointSample],
    grid: PolarGrid,
    measure: Measure,
    boundary: tuple[tuple[int, int], tuple[int, int]] | None = None,
    outer: tuple[int, int] | None = None,
) -> VeinSet:
    """Grow laterals then thins, taking every length from ``measure``.

    ``measure(points, direction_indices, m)`` returns lengths; a NaN for a
    lateral is an error, a NaN or non-positive value for a thin skips it.
    ``boundary`` optionally overrides the (up, down) direction indices of
    the first and last lateral. ``outer`` gives the grid directions of an
    extra thin vein on each side of the first and last lateral, grown
    toward the text ends.
    """
    n = len(starts)
    if n < 2:
        raise ValueError("vein growth needs at least 2 start points")
    pts = np.array([s.point for s in starts], dtype=float)
    pot = [lateral_directions(s.tangent_angle) for s in starts]
    idx_up = np.array([rectify_index(u, grid) for u, _ in pot])
    idx_down = np.array([rectify_index(d, grid) for _, d in pot])
    if boundary is not None:
        (idx_up[0], idx_down[0]), (idx_up[-1], idx_down[-1]) = boundary

    lengths = measure(np.concatenate([pts, pts]), np.concatenate([idx_up, idx_down]), grid.m)
    if np.isnan(lengths).any():
        bad = int(np.flatnonzero(np.isnan(lengths))[0]) % n
        raise OutsidePolygonError(f"lateral start {bad} at {tuple(pts[bad])} has no measurable length")
    len_up, len_down = lengths[:n], lengths[n:]

    laterals = [
        LateralVeinPair(
            start=Point(float(pts[i, 0]), float(pts[i, 1])),
            potential_up=float(pot[i][0]),
            potential_down=float(pot[i][1]),
            rect_up=grid.angle(int(idx_up[i])),
            rect_down=grid.angle(int(idx_down[i])),
            len_up=float(len_up[i]),
            len_down=float(len_down[i]),
        )
        for i in range(n)
    ]

    # per side and gap (i, i+1): right thin of i takes i+1's direction, left thin of i+1 takes i's
    keys: list[tuple[str, int, str]] = []
    origins: list[Point] = []
    dirs: list[int] = []
    for side, idx in ((UP, idx_up), (DOWN, idx_down)):
        mids = [lat.midpoint(side) for lat in laterals]
        if outer is not None:
            keys += [(side, 0, "l"), (side, n - 1, "r")]
            origins += [mids[0], mids[n - 1]]
            dirs += [int(outer[0]), int(outer[1])]
        for i in range(n - 1):
            right, left = thin_directions(int(idx[i]), int(idx[i + 1]))
            keys.append((side, i, "r"))
            origins.append(mids[i])
            dirs.append(right)
            keys.append((side, i + 1, "l"))
            origins.append(mids[i + 1])
            dirs.append(left)

    thin_len = measure(np.array(origins, dtype=float), np.array(dirs), grid.m)
    thins: list[ThinVein] = []
    skipped: list[tuple[str, int, str]] = []
    for key, origin, d, length in zip(keys, origins, dirs, thin_len):
        if not np.isfinite(length) or length <= 0.0:
            skipped.append(key)
            continue
        thins.append(ThinVein(origin, grid.angle(d), float(length), key[0], key[1], key[2]))
    return VeinSet(laterals, thins, skipped)


def grow_veins(starts: Sequence[StartPointSample], poly: Polygon, grid: PolarGrid) -> VeinSet:
    """Measure every vein against ``poly``; starts must be strictly inside it."""
    pts = np.array([s.point for s in starts], dtype=float)
    inside = poly.contains(pts)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise OutsidePolygonError(f"start point {bad} at {tuple(pts[bad])} lies outside the polygon")
    veins = grow_with(starts, grid, polygon_measure(poly))
    if any(not np.isfinite(v) for lat in veins.laterals for v in (lat.len_up, lat.len_down)):
        raise GeometryError("ray from an interior start did not meet the contour")
    return veins
