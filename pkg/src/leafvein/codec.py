"""Encoder (label generation) and decoder (vein growth) for text polygons.

Both directions run the same growth routine; only the source of vein
lengths differs. The encoder casts rays against the source polygon and
records what it measured, the decoder reads those lengths back from a
per-pixel length map.

The main vein is fitted on the shrunk kernel, so on its own it stops short
of the text ends. At each kernel exit an end vein runs outward along the
rectified tangent to the contour, and two probes measure the half widths.
The outermost start points move out along the end veins until the
boundary laterals can reach the corners, and the end veins close the
contour between the two sides.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .config import LvtConfig
from .geometry import (
    GeometryError,
    Point,
    PolarGrid,
    Polygon,
    RasterMask,
    ShrinkCollapseError,
    direction_vectors,
    mask_iou,
    rasterize,
    rasterize_vertices,
    shrink_polygon,
    wrap_degrees,
)
from .mainvein import MainVein, StartPointSample, fit_main_vein, sample_positions
from .veins import Measure, ThinVein, VeinSet, grow_with, lateral_directions, polygon_measure, rectify_index

LABEL_VERSION = "1"
#: start points keep this distance (px) from where the end veins meet the contour
END_MARGIN = 0.5


class CodecError(ValueError):
    pass


class EncodeDegenerateError(CodecError):
    pass


class MissingLengthError(CodecError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class EmptyKernelInputError(CodecError):
    pass


def pixel_of(point) -> tuple[int, int]:
    return int(np.floor(point[0])), int(np.floor(point[1]))


@dataclass(frozen=True)
class LengthRecord:
    x: int
    y: int
    lengths: tuple[float, ...]


class LengthMap:
    """Sparse per-pixel length vectors, one entry per polar direction."""

    def __init__(self, m: int, records: Iterable[LengthRecord] = ()):
        self.m = m
        self._table: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self.conflicts = 0
        for r in records:
            vec = np.asarray(r.lengths, dtype=float)
            if vec.shape != (m,):
                raise CodecError(f"record at ({r.x}, {r.y}) holds {vec.size} lengths, expected {m}")
            self._table[(r.x, r.y)] = (vec, np.ones(m, dtype=bool))

    def put(self, point, index: int, length: float) -> float:
        """Store ``length`` unless the slot is taken; returns the stored value."""
        key = pixel_of(point)
        vec, filled = self._table.setdefault(key, (np.zeros(self.m), np.zeros(self.m, dtype=bool)))
        if filled[index]:
            if vec[index] != length:
                self.conflicts += 1
            return float(vec[index])
        vec[index], filled[index] = length, True
        return length

    def lookup(self, point, index: int) -> float:
        key = pixel_of(point)
        try:
            return float(self._table[key][0][index])
        except KeyError:
            raise MissingLengthError(f"no length recorded at pixel {key}") from None

    def __call__(self, point, index: int) -> float:
        return self.lookup(point, index)

    def scaled(self, factor: float) -> "LengthMap":
        out = LengthMap(self.m)
        out._table = {k: (v * factor, f.copy()) for k, (v, f) in self._table.items()}
        return out

    def records(self) -> list[LengthRecord]:
        ordered = sorted(self._table.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        return [LengthRecord(x, y, tuple(float(v) for v in vec)) for (x, y), (vec, _) in ordered]

    def __len__(self) -> int:
        return len(self._table)


@dataclass(frozen=True)
class EndVeins:
    points: np.ndarray  # (2, 2): vein leaving the kernel backward, forward
    directions: tuple[float, float]
    lengths: tuple[float, float]


@dataclass(frozen=True)
class Growth:
    main_vein: MainVein
    starts: list[StartPointSample]
    ends: EndVeins
    veins: VeinSet
    x_range: tuple[float, float]


@dataclass
class LvtLabel:
    polygon: Polygon
    kernel: RasterMask
    lengths: LengthMap
    growth: Growth
    kernel_polygon: Polygon | None = None

    @property
    def length_records(self) -> list[LengthRecord]:
        return self.lengths.records()

    @property
    def lateral_starts(self) -> list[Point]:
        return [s.point for s in self.growth.starts]

    @property
    def thin_starts(self) -> list[Point]:
        return [t.start for t in self.growth.veins.thins]

    @property
    def veins(self) -> VeinSet:
        return self.growth.veins


@dataclass(frozen=True)
class ReconstructedContour:
    vertices: np.ndarray
    source: str = ""
    growth: Growth | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.vertices)


def _neighbours(alpha: float, grid: PolarGrid) -> tuple[int, ...]:
    """Grid directions enclosing ``alpha``, the rectified one first; one if ``alpha`` is on the grid."""
    alpha = wrap_degrees(alpha)
    lower = int(np.floor(alpha / grid.step + 1e-9)) % grid.m
    if _angle_between(alpha, grid.angle(lower)) < 1e-9:
        return (lower,)
    near = rectify_index(alpha, grid)
    far = (lower + 1) % grid.m if near == lower else lower
    return near, far


def _angle_between(a: float, b: float) -> float:
    return abs((a - b + 180.0) % 360.0 - 180.0)


def _outward_tan(direction: float, normal: float, outward: float) -> float:
    """Tangent of the lean of ``direction`` away from ``normal``, positive toward ``outward``."""
    d = np.deg2rad(direction)
    return float(np.cos(d - np.deg2rad(outward)) / np.cos(d - np.deg2rad(normal)))


def _cap_choice(normals, outward: float, halves, grid: PolarGrid) -> tuple[tuple[int, int], float]:
    """Pick the lateral directions of a boundary start and how far to move it inward.

    Each side may use either grid neighbour of its normal. A lateral leaning
    outward needs the start moved inward by ``half * lean`` to reach the long
    side; the shared start takes the largest such move, and every other side
    then lands short of its corner. The combination with the smallest total
    shortfall (weighted by half width) wins, rectified directions on ties.
    """
    options = [_neighbours(nrm, grid) for nrm in normals]
    best = None
    for pick in np.ndindex(*(len(o) for o in options)):
        dirs = [options[s][k] for s, k in enumerate(pick)]
        leans = [h * _outward_tan(grid.angle(d), nrm, outward) for d, nrm, h in zip(dirs, normals, halves)]
        inset = max(0.0, *leans)
        cost = sum(h * (inset - lean) for h, lean in zip(halves, leans))
        if best is None or cost < best[0] - 1e-9:
            best = (cost, (dirs[0], dirs[1]), inset)
    return best[1], best[2]


def _end_layout(mv: MainVein, grid: PolarGrid, measure: Measure):
    """Measure the text ends from where the main vein leaves the kernel.

    At each exit point one end vein runs outward along the rectified tangent
    and two probes, leaning inward off the lateral normals, give the half
    widths there. Those decide the boundary lateral directions and how far
    the boundary start sits inside the end. Returns the end veins, the
    widened x range and the (up, down) direction indices of both boundary
    laterals.
    """
    x_lo, x_hi = mv.x_range
    points, tangents = mv.evaluate([x_lo, x_hi])
    outward = [wrap_degrees(tangents[0] + 180.0), float(tangents[1])]
    normals = [lateral_directions(float(t)) for t in tangents]
    end_idx = [rectify_index(out, grid) for out in outward]
    probe_idx = []
    for nrms, out in zip(normals, outward):
        sides = []
        for nrm in nrms:
            cands = _neighbours(nrm, grid)
            sides.append(min(cands, key=lambda k: _outward_tan(grid.angle(k), nrm, out)))
        probe_idx.append(sides)
    pts = np.repeat(points, 3, axis=0)
    idx = np.array([k for e, pr in zip(end_idx, probe_idx) for k in (e, *pr)])
    raw = measure(pts, idx, grid.m).reshape(2, 3)
    raw = np.where(np.isfinite(raw) & (raw > 0.0), raw, 0.0)

    grown, boundary = [], []
    for j, out in enumerate(outward):
        along = raw[j, 0] * np.cos(np.deg2rad(_angle_between(grid.angle(end_idx[j]), out)))
        halves = [
            raw[j, 1 + s] * np.cos(np.deg2rad(_angle_between(grid.angle(probe_idx[j][s]), nrm)))
            for s, nrm in enumerate(normals[j])
        ]
        dirs, inset = _cap_choice(normals[j], out, halves, grid)
        boundary.append(dirs)
        grown.append(along - inset - END_MARGIN)
    ends = EndVeins(
        points,
        (grid.angle(end_idx[0]), grid.angle(end_idx[1])),
        (float(raw[0, 0]), float(raw[1, 0])),
    )
    lo, hi = x_lo, x_hi
    for j, ext in enumerate(grown):
        sign = -1.0 if j == 0 else 1.0
        if ext >= 0.0:
            dx = ext * _ray_reach(mv, ends, j) / max(np.cos(np.deg2rad(_angle_between(ends.directions[j], outward[j]))), 1e-6)
        else:
            slope = float(mv.slope_at(x_lo if j == 0 else x_hi))
            dx = ext / np.sqrt(1.0 + slope * slope)
        if j == 0:
            lo = x_lo + sign * dx
        else:
            hi = x_hi + sign * dx
    if not hi > lo:
        lo, hi = x_lo, x_hi
    return ends, (float(lo), float(hi)), (boundary[0], boundary[1])


def _ray_reach(mv: MainVein, ends: EndVeins, j: int) -> float:
    """Frame-x advance per unit length along end vein ``j`` (0 = low end), floored at 0.05."""
    u = np.deg2rad(ends.directions[j] - mv.frame_angle)
    return max(abs(float(np.cos(u))), 0.05)


def vein_points(mv: MainVein, ends: EndVeins, xs) -> np.ndarray:
    """Image points of the main vein at frame positions ``xs``.

    Inside the kernel extent this is the fitted polynomial; beyond it the vein
    follows the end veins, which run from the kernel exit straight to the
    contour, so every point up to the contour stays inside the text.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    x_lo, x_hi = mv.x_range
    out = mv.to_image(np.clip(xs, x_lo, x_hi))
    for j, beyond in ((0, xs < x_lo), (1, xs > x_hi)):
        if not beyond.any():
            continue
        reach = _ray_reach(mv, ends, j)
        dist = np.abs(xs[beyond] - (x_lo if j == 0 else x_hi)) / reach
        u = direction_vectors(ends.directions[j])
        out[beyond] = ends.points[j] + dist[:, None] * u[None, :]
    return out


def _starts(mv: MainVein, ends: EndVeins, x_range: tuple[float, float], n: int) -> list[StartPointSample]:
    xs = sample_positions(x_range, n)
    points = vein_points(mv, ends, xs)
    tangents = np.atleast_1d(mv.tangent_at(np.clip(xs, *mv.x_range)))
    return [StartPointSample(Point(float(p[0]), float(p[1])), float(t)) for p, t in zip(points, tangents)]


def grow(kernel: RasterMask, cfg: LvtConfig, measure: Measure) -> Growth:
    """Fit the main vein on ``kernel`` and grow every vein with ``measure``."""
    grid = PolarGrid(cfg.n_d)
    mv = fit_main_vein(kernel, cfg.n_p, cfg.poly_degree)
    ends, x_range, boundary = _end_layout(mv, grid, measure)
    starts = _starts(mv, ends, x_range, cfg.n_p)
    outer = tuple(rectify_index(d, grid) for d in ends.directions)
    veins = grow_with(starts, grid, measure, boundary=boundary, outer=outer)
    caps = [
        ThinVein(Point(float(p[0]), float(p[1])), d, length, "end", parent, kind)
        for p, d, length, parent, kind in zip(ends.points, ends.directions, ends.lengths, (0, cfg.n_p - 1), ("l", "r"))
        if length > 0.0
    ]
    veins = VeinSet(veins.laterals, veins.thins, veins.skipped, caps)
    return Growth(mv, starts, ends, veins, x_range)


def _recording(measure: Measure, table: LengthMap) -> Measure:
    """Measure, store, and hand back what was stored, so decoding sees the same values."""

    def wrapped(points, indices, m):
        out = measure(points, indices, m)
        kept = [
            table.put(p, int(k), float(v) if np.isfinite(v) and v > 0.0 else 0.0)
            for p, k, v in zip(points, indices, out)
        ]
        return np.array(kept, dtype=float)

    return wrapped


def encode(poly: Polygon, cfg: LvtConfig, canvas: tuple[int, int]) -> LvtLabel:
    """Generate the kernel mask and vein-length label of one text polygon.

    ``canvas`` is ``(width, height)``.
    """
    width, height = canvas
    try:
        kernel_poly = shrink_polygon(poly, cfg.shrink_ratio)
    except ShrinkCollapseError as exc:
        raise EncodeDegenerateError(str(exc)) from exc
    kernel = rasterize(kernel_poly, width, height)
    if kernel.count < 2:
        raise EncodeDegenerateError("kernel covers fewer than 2 pixels")

    table = LengthMap(cfg.n_d)
    inside_poly = polygon_measure(poly)
    try:
        growth = grow(kernel, cfg, _recording(inside_poly, table))
    except GeometryError as exc:
        raise EncodeDegenerateError(f"cannot grow veins: {exc}") from exc
    starts = np.array([s.point for s in growth.starts])
    if not np.all(poly.contains(starts)):
        raise EncodeDegenerateError("main vein leaves the polygon")
    return LvtLabel(poly, kernel, table, growth, kernel_poly)


def _lookup_measure(lengths) -> Measure:
    lookup: Callable = lengths.lookup if hasattr(lengths, "lookup") else lengths

    def measure(points, indices, m):
        return np.array([lookup(p, int(k)) for p, k in zip(points, indices)], dtype=float)

    return measure


def decode(kernel: RasterMask, lengths, cfg: LvtConfig, source: str = "") -> ReconstructedContour:
    """Rebuild a contour from a kernel mask and a length lookup.

    ``lengths`` is a :class:`LengthMap` or any callable ``(point, index) -> length``.
    """
    if kernel.is_empty():
        raise EmptyKernelInputError("kernel mask is empty")
    growth = grow(kernel, cfg, _lookup_measure(lengths))
    return ReconstructedContour(growth.veins.contour(), source, growth)


def roundtrip_iou(poly: Polygon, cfg: LvtConfig, canvas: tuple[int, int]) -> float:
    """IoU between ``poly`` and the contour rebuilt from its own label."""
    width, height = canvas
    label = encode(poly, cfg, canvas)
    contour = decode(label.kernel, label.lengths, cfg)
    return mask_iou(rasterize(poly, width, height), rasterize_vertices(contour.vertices, width, height))


def split_instances(mask: RasterMask) -> list[RasterMask]:
    """Split a kernel map into one mask per 8-connected component."""
    from scipy import ndimage

    labels, count = ndimage.label(mask.bits, structure=np.ones((3, 3), dtype=int))
    return [RasterMask(labels == i) for i in range(1, count + 1)]


# label serialization


def kernel_to_rle(mask: RasterMask) -> dict:
    rows = []
    for row in mask.bits:
        padded = np.concatenate([[False], row, [False]])
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        runs = []
        for start, stop in zip(edges[0::2], edges[1::2]):
            runs += [int(start), int(stop - start)]
        rows.append(runs)
    return {"width": mask.width, "height": mask.height, "rows": rows}


def kernel_from_rle(doc: dict) -> RasterMask:
    width, height, rows = int(doc["width"]), int(doc["height"]), doc["rows"]
    if len(rows) != height:
        raise CodecError(f"kernel RLE has {len(rows)} rows, expected {height}")
    bits = np.zeros((height, width), dtype=bool)
    for r, runs in enumerate(rows):
        if len(runs) % 2:
            raise CodecError(f"kernel RLE row {r} has an odd run list")
        for start, length in zip(runs[0::2], runs[1::2]):
            if start < 0 or length < 0 or start + length > width:
                raise CodecError(f"kernel RLE row {r} run out of bounds")
            bits[r, start : start + length] = True
    return RasterMask(bits)


def instance_to_dict(label: LvtLabel) -> dict:
    return {
        "polygon": label.polygon.vertices.tolist(),
        "kernel_rle": kernel_to_rle(label.kernel),
        "records": [{"x": r.x, "y": r.y, "lengths": list(r.lengths)} for r in label.length_records],
    }


def label_document(image_id: str, labels: Iterable[LvtLabel], n_d: int) -> dict:
    return {
        "version": LABEL_VERSION,
        "image_id": image_id,
        "n_d": n_d,
        "instances": [instance_to_dict(lab) for lab in labels],
    }


def dumps_label_document(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def loads_label_document(text: str) -> dict:
    """Parse and validate a label document; returns the plain JSON structure."""
    doc = json.loads(text)
    if not isinstance(doc, dict) or "instances" not in doc:
        raise CodecError("label document must be an object with 'instances'")
    for inst in doc["instances"]:
        kernel_from_rle(inst["kernel_rle"])
        for rec in inst["records"]:
            if len(rec["lengths"]) != doc.get("n_d", len(rec["lengths"])):
                raise CodecError("record length vector does not match n_d")
    return doc


def instance_from_dict(inst: dict, m: int) -> tuple[Polygon, RasterMask, LengthMap]:
    poly = Polygon(inst["polygon"])
    kernel = kernel_from_rle(inst["kernel_rle"])
    records = [LengthRecord(int(r["x"]), int(r["y"]), tuple(float(v) for v in r["lengths"])) for r in inst["records"]]
    return poly, kernel, LengthMap(m, records)
