"""Synthetic text-shape corpora, the upper-bound IoU sweep, and SVG rendering.

The upper bound of the representation is the IoU between a polygon and the
contour decoded from its own label; no predictor is involved.
"""

from __future__ import annotations

import json
import math
import os
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .codec import CodecError, LvtLabel, ReconstructedContour, roundtrip_iou, vein_points
from .config import LvtConfig
from .geometry import GeometryError, Polygon, rotate_points

CANVAS = (512, 512)
KINDS = ("rect", "rotated_rect", "sine_ribbon", "arc_ribbon", "wave_word")
REPORT_VERSION = "1"
THREADS_ENV = "LEAFVEIN_THREADS"


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeParams:
    """Sampling ranges for synthetic shapes.

    ``aspect`` is length over thickness, ``amplitude`` the largest sine
    amplitude as a multiple of the thickness.
    """

    aspect: tuple[float, float] = (1.0, 10.0)
    thickness: tuple[float, float] = (20.0, 40.0)
    amplitude: float = 0.5
    max_length: float = 400.0
    margin: float = 4.0
    points_per_side: int = 48


#: highly curved ribbons
CURVED = ShapeParams(aspect=(4.0, 12.0), amplitude=1.5)


def _ribbon(center: np.ndarray, normal: np.ndarray, half) -> np.ndarray:
    top = center - normal * np.asarray(half)[..., None]
    bottom = center + normal * np.asarray(half)[..., None]
    return np.vstack([top, bottom[::-1]])


def _curve_normals(pts: np.ndarray) -> np.ndarray:
    tangent = np.gradient(pts, axis=0)
    tangent /= np.hypot(tangent[:, 0], tangent[:, 1])[:, None]
    return np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)


def _rect(rng, p: ShapeParams) -> np.ndarray:
    t = rng.uniform(*p.thickness)
    length = min(rng.uniform(*p.aspect) * t, p.max_length)
    return np.array([(-length / 2, -t / 2), (length / 2, -t / 2), (length / 2, t / 2), (-length / 2, t / 2)])


def _sine(rng, p: ShapeParams) -> np.ndarray:
    t = rng.uniform(*p.thickness)
    length = min(rng.uniform(max(p.aspect[0], 4.0), max(p.aspect[1], 4.0)) * t, p.max_length)
    amp = rng.uniform(0.0, p.amplitude) * t
    periods = rng.uniform(0.5, 1.5)
    if amp > 0:
        # keep the curvature radius at least 1.5 half-thicknesses so the sides never fold
        periods = min(periods, length / (2 * math.pi) / math.sqrt(0.75 * t * amp))
    phase = rng.uniform(0.0, 2 * math.pi)
    x = np.linspace(-length / 2, length / 2, p.points_per_side)
    y = amp * np.sin(2 * math.pi * periods * x / length + phase)
    y -= y.mean()
    center = np.stack([x, y], axis=1)
    return _ribbon(center, _curve_normals(center), np.full(len(x), t / 2))


def arc_ribbon(radius: float, thickness: float, sweep_deg: float, n: int = 48) -> np.ndarray:
    """Annulus sector centered on the origin, symmetric about -y."""
    a = np.deg2rad(np.linspace(-sweep_deg / 2, sweep_deg / 2, n) - 90.0)
    unit = np.stack([np.cos(a), np.sin(a)], axis=1)
    outer = unit * (radius + thickness / 2)
    inner = unit * (radius - thickness / 2)
    return np.vstack([outer, inner[::-1]])


def _arc(rng, p: ShapeParams) -> np.ndarray:
    t = rng.uniform(*p.thickness)
    sweep = rng.uniform(60.0, 180.0)
    length = min(rng.uniform(max(p.aspect[0], 3.0), max(p.aspect[1], 3.0)) * t, p.max_length)
    radius = max(length / np.deg2rad(sweep), 1.5 * t)
    if 2 * (radius + t / 2) > p.max_length:
        radius = p.max_length / 2 - t / 2
    pts = arc_ribbon(radius, t, sweep, p.points_per_side)
    return pts - pts.mean(axis=0)


def _wave_word(rng, p: ShapeParams) -> np.ndarray:
    t = rng.uniform(*p.thickness)
    length = min(rng.uniform(max(p.aspect[0], 3.0), max(p.aspect[1], 3.0)) * t, p.max_length)
    bow = rng.uniform(-0.5, 0.5) * t
    glyph = rng.uniform(0.5, 0.9) * t
    x = np.linspace(-length / 2, length / 2, p.points_per_side)
    y = bow * (2 * x / length) ** 2
    center = np.stack([x, y - y.mean()], axis=1)
    normal = _curve_normals(center)
    # glyph bumps on the top edge only, like ascenders over a baseline
    bumps = 0.1 * t * np.abs(np.sin(math.pi * (x + length / 2) / glyph))
    top = center - normal * (t / 2 + bumps)[:, None]
    bottom = center + normal * (t / 2)
    return np.vstack([top, bottom[::-1]])


_MAKERS = {"rect": _rect, "rotated_rect": _rect, "sine_ribbon": _sine, "arc_ribbon": _arc, "wave_word": _wave_word}


def synth_corpus(
    kind: str,
    count: int,
    seed: int,
    params: ShapeParams | None = None,
    canvas: tuple[int, int] = CANVAS,
) -> list[Polygon]:
    """``count`` random polygons of one kind, reproducible from ``seed``.

    Every kind except ``rect`` (axis-aligned) is rotated uniformly in
    [0, 360) degrees; shapes are translated to lie inside ``canvas``.
    """
    if kind not in _MAKERS:
        raise AnalysisError(f"unknown corpus kind {kind!r}; expected one of {', '.join(KINDS)}")
    if count < 1:
        raise AnalysisError("corpus count must be at least 1")
    params = params or ShapeParams()
    rng = np.random.default_rng(seed)
    width, height = canvas
    out = []
    for _ in range(count):
        pts = _MAKERS[kind](rng, params)
        theta = 0.0 if kind == "rect" else rng.uniform(0.0, 360.0)
        pts = rotate_points(pts, theta, (0.0, 0.0))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        room = np.array([width, height]) - (hi - lo) - 2 * params.margin
        shift = rng.uniform(0.0, 1.0, 2) * np.maximum(room, 0.0)
        pts = pts - lo + params.margin + shift
        out.append(Polygon(pts))
    return out


@dataclass(frozen=True)
class SweepRow:
    n_d: int
    n_p: int
    mean: float | None
    min: float | None
    p5: float | None
    failures: int
    count: int


@dataclass
class SweepReport:
    corpus_id: str
    seed: int
    rows: list[SweepRow] = field(default_factory=list)
    ious: dict[tuple[int, int], list[float | None]] = field(default_factory=dict, repr=False)

    def row(self, n_d: int, n_p: int) -> SweepRow:
        for r in self.rows:
            if (r.n_d, r.n_p) == (n_d, n_p):
                return r
        raise KeyError((n_d, n_p))

    def to_dict(self, per_instance: bool = False) -> dict:
        doc = {
            "version": REPORT_VERSION,
            "corpus_id": self.corpus_id,
            "seed": self.seed,
            "rows": [dict(r.__dict__) for r in self.rows],
        }
        if per_instance:
            # None marks an instance whose label could not be generated
            doc["ious"] = {f"{d},{p}": list(v) for (d, p), v in self.ious.items()}
        return doc

    def to_json(self, per_instance: bool = False) -> str:
        return json.dumps(self.to_dict(per_instance), sort_keys=True, indent=1) + "\n"

    def to_table(self) -> str:
        head = f"{'n_d':>4} {'n_p':>4} {'mean':>8} {'min':>8} {'p5':>8} {'fail':>5} {'n':>6}"
        lines = [f"# corpus {self.corpus_id} seed {self.seed}", head]

        def fmt(v):
            return f"{v:8.4f}" if v is not None else f"{'-':>8}"

        for r in self.rows:
            lines.append(f"{r.n_d:>4} {r.n_p:>4} {fmt(r.mean)} {fmt(r.min)} {fmt(r.p5)} {r.failures:>5} {r.count:>6}")
        return "\n".join(lines) + "\n"


def thread_count(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        threads = int(raw) if raw else 1
    return max(1, int(threads))


def _cell_ious(job) -> list[float | None]:
    vertices, cfg, canvas = job
    out: list[float | None] = []
    for verts in vertices:
        try:
            out.append(roundtrip_iou(Polygon(verts), cfg, canvas))
        except (CodecError, GeometryError):
            out.append(None)
    return out


def upper_bound_sweep(
    corpus: Sequence[Polygon],
    n_d_set: Sequence[int],
    n_p_set: Sequence[int],
    cfg: LvtConfig | None = None,
    *,
    canvas: tuple[int, int] = CANVAS,
    corpus_id: str = "corpus",
    seed: int = 0,
    threads: int | None = None,
) -> SweepReport:
    """Roundtrip IoU of every shape at every (n_d, n_p) cell.

    Shapes whose label cannot be generated count as failures and are left
    out of the statistics. Work is split into fixed chunks and reassembled
    in grid order, so the report does not depend on ``threads``.
    """
    corpus = list(corpus)
    if not corpus:
        raise AnalysisError("corpus is empty")
    if not n_d_set or not n_p_set:
        raise AnalysisError("sweep grid is empty")
    cfg = cfg or LvtConfig()
    cells = [(int(d), int(p)) for d in n_d_set for p in n_p_set]
    cell_cfgs = [replace(cfg, n_d=d, n_p=p) for d, p in cells]
    verts = [poly.vertices for poly in corpus]
    chunk = 25
    jobs, owners = [], []
    for c, ccfg in enumerate(cell_cfgs):
        for lo in range(0, len(verts), chunk):
            jobs.append((verts[lo : lo + chunk], ccfg, canvas))
            owners.append(c)

    workers = thread_count(threads)
    if workers == 1:
        results = [_cell_ious(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_ious, jobs))

    per_cell: list[list[float | None]] = [[] for _ in cells]
    for owner, res in zip(owners, results):
        per_cell[owner].extend(res)

    report = SweepReport(corpus_id, seed)
    for (d, p), ious in zip(cells, per_cell):
        ok = np.array([v for v in ious if v is not None], dtype=float)
        stats = (float(ok.mean()), float(ok.min()), float(np.percentile(ok, 5))) if ok.size else (None, None, None)
        report.rows.append(SweepRow(d, p, *stats, failures=len(ious) - ok.size, count=len(ious)))
        report.ious[(d, p)] = ious
    return report


# rendering

_STYLE = {
    "polygon": {"stroke": "#000000", "fill": "none", "stroke-width": "1"},
    "kernel": {"stroke": "none", "fill": "#9e9e9e", "fill-opacity": "0.5"},
    "main-vein": {"stroke": "#2e7d32", "fill": "none", "stroke-width": "1.5"},
    "lateral": {"stroke": "#1565c0", "stroke-width": "1"},
    "thin": {"stroke": "#00acc1", "stroke-width": "0.8"},
    "end": {"stroke": "#8e24aa", "stroke-width": "0.8"},
    "contour": {"stroke": "#d32f2f", "fill": "none", "stroke-width": "1"},
}


def _points_attr(pts) -> str:
    return " ".join(f"{x:.3f},{y:.3f}" for x, y in np.asarray(pts, dtype=float))


def _layer(root, name: str) -> ET.Element:
    return ET.SubElement(root, "g", {"id": name, **_STYLE[name]})


def render_instance(poly: Polygon, label: LvtLabel, contour: ReconstructedContour, path) -> None:
    """Write an SVG with one layer per element: polygon, kernel, veins, contour."""
    kernel = label.kernel
    root = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(kernel.width),
            "height": str(kernel.height),
            "viewBox": f"0 0 {kernel.width} {kernel.height}",
        },
    )
    ET.SubElement(_layer(root, "polygon"), "polygon", {"points": _points_attr(poly.vertices)})

    k = _layer(root, "kernel")
    for row, bits in enumerate(kernel.bits):
        cols = np.flatnonzero(np.diff(np.concatenate([[0], bits.astype(np.int8), [0]])))
        for start, stop in zip(cols[0::2], cols[1::2]):
            ET.SubElement(k, "rect", {"x": str(start), "y": str(row), "width": str(stop - start), "height": "1"})

    growth = label.growth
    xs = np.linspace(*growth.x_range, 64)
    ET.SubElement(_layer(root, "main-vein"), "polyline", {"points": _points_attr(vein_points(growth.main_vein, growth.ends, xs))})

    segments = growth.veins.segments()
    for name in ("lateral", "thin", "end"):
        g = _layer(root, name)
        for a, b in segments[name]:
            ET.SubElement(g, "line", {"x1": f"{a[0]:.3f}", "y1": f"{a[1]:.3f}", "x2": f"{b[0]:.3f}", "y2": f"{b[1]:.3f}"})

    ET.SubElement(_layer(root, "contour"), "polygon", {"points": _points_attr(contour.vertices)})
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)
