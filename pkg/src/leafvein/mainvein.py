"""Main-vein extraction from a kernel mask.

Kernel center points are middle-sampled (median pixel per sampled column)
in a frame rotated so that the text runs along +x, and a polynomial
``y = sum w_k x^k`` is least-squares fitted in that frame. Padding the mask
by its height on every side is a pure translation, so it is carried as an
offset instead of a bigger array.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import shapely

from .geometry import GeometryError, Point, RasterMask, rotate_points, wrap_degrees

#: shortest run (px) from the fitted span to a kernel end that may bend the vein toward it
ANCHOR_MIN_RUN = 8.0
#: passes of re-sampling the kernel in the rotated frame
REFINE_PASSES = 20
#: fraction of the kernel length ignored at each end when estimating the frame trend
REFINE_TRIM = 0.15
#: frame turn (degrees) below which refinement stops
REFINE_TOL = 0.05


class EmptyKernelError(GeometryError):
    pass


class UnderdeterminedFitError(GeometryError):
    pass


def default_degree(n_p: int) -> int:
    return 3 if n_p >= 5 else min(n_p - 1, 3)


def _median_along(values: np.ndarray) -> int:
    ordered = np.sort(values)
    return int(ordered[len(ordered) // 2])


def middle_sample(mask: RasterMask, n: int) -> np.ndarray:
    """Return ``n`` kernel center points as an (n, 2) array of (col, row).

    Samples ``n`` columns (or rows, if the kernel is taller than wide) at
    ``lo + i * extent / (n + 1)``, rounded half-up to a pixel index, and takes
    the median set pixel across each. An empty sampled line falls back to the
    nearest non-empty one.
    """
    if n < 2:
        raise ValueError(f"need at least 2 center samples, got {n}")
    pts = mask.coordinates()
    if len(pts) == 0:
        raise EmptyKernelError("kernel mask is empty")
    x_min, y_min = pts.min(axis=0)
    x_max, y_max = pts.max(axis=0)
    if x_max == x_min and y_max == y_min:
        raise EmptyKernelError("kernel mask has zero extent")

    horizontal = (x_max - x_min) > (y_max - y_min)
    axis, other = (0, 1) if horizontal else (1, 0)
    lo, hi = (x_min, x_max) if horizontal else (y_min, y_max)
    occupied = np.unique(pts[:, axis])

    out = np.empty((n, 2), dtype=float)
    for i in range(1, n + 1):
        target = int(np.floor(lo + i * (hi - lo) / (n + 1) + 0.5))
        line = occupied[np.argmin(np.abs(occupied - target))]
        across = pts[pts[:, axis] == line][:, other]
        out[i - 1, axis] = line
        out[i - 1, other] = _median_along(across)
    return out


@dataclass(frozen=True)
class StartPointSample:
    point: Point
    tangent_angle: float


@dataclass(frozen=True)
class MainVein:
    """Polynomial main vein and the rotated frame it lives in.

    ``coeffs[k]`` multiplies ``x**k`` where ``x`` is the rotated, padded
    x-coordinate. The polynomial holds over ``fit_range`` (the span of the
    fitted center points); ``x_range`` spans the whole kernel.

    With ``ends`` set, each end of the kernel carries a point height and a
    local slope ``((y_lo, slope_lo), (y_hi, slope_hi))``: the vein runs
    straight from the polynomial to that point and leaves the kernel along
    that slope. Without it the polynomial is continued along its end
    tangents.
    """

    coeffs: tuple[float, ...]
    degree: int
    frame_angle: float
    frame_origin: Point
    pad: float
    fit_range: tuple[float, float]
    x_range: tuple[float, float]
    ends: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        if len(self.coeffs) != self.degree + 1:
            raise ValueError("coeffs must hold degree + 1 values")
        if not self.x_range[1] > self.x_range[0]:
            raise ValueError("main vein x_range is degenerate")

    def _poly(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def _dpoly(self, x):
        return np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(self.coeffs))

    def _pieces(self, j: int) -> tuple[float, float, float, float]:
        """(x at kernel end, y there, slope of the link, slope beyond) for end ``j``."""
        xf = self.fit_range[j]
        yf, sf = float(self._poly(xf)), float(self._dpoly(xf))
        if self.ends is None:
            return xf, yf, sf, sf
        xe = self.x_range[j]
        ye, se = self.ends[j]
        link = (yf - ye) / (xf - xe) if abs(xf - xe) > 1e-9 else se
        return xe, ye, link, se

    def _piecewise(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.fit_range
        xc = np.clip(x, lo, hi)
        y, slope = self._poly(xc), self._dpoly(xc)
        for j, side in ((0, x < lo), (1, x > hi)):
            if not side.any():
                continue
            xe, ye, link, beyond = self._pieces(j)
            xs = x[side]
            outside = xs <= xe if j == 0 else xs >= xe
            xf, yf = self.fit_range[j], float(self._poly(self.fit_range[j]))
            y[side] = np.where(outside, ye + beyond * (xs - xe), yf + link * (xs - xf))
            slope[side] = np.where(outside, beyond, link)
        return y, slope

    def slope_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._piecewise(np.atleast_1d(x))[1].reshape(x.shape)

    def y_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._piecewise(np.atleast_1d(x))[0].reshape(x.shape)

    def tangent_at(self, x) -> np.ndarray:
        """Growth direction in image degrees, in [0, 360)."""
        local = np.rad2deg(np.arctan(self.slope_at(x)))
        return wrap_degrees(local + self.frame_angle)

    def to_image(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        rotated = np.stack([x, self.y_at(x)], axis=1)
        return rotate_points(rotated, self.frame_angle, self.frame_origin) - self.pad

    def from_image(self, points) -> np.ndarray:
        padded = np.asarray(points, dtype=float) + self.pad
        return rotate_points(padded, -self.frame_angle, self.frame_origin)

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        return self.to_image(x), np.atleast_1d(self.tangent_at(x))


def _column_medians(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit columns of rotated x that hold points, and the median y of each."""
    cols = np.floor(points[:, 0]).astype(np.int64)
    order = np.lexsort((points[:, 1], cols))
    cols, ys = cols[order], points[order, 1]
    uniq, first, counts = np.unique(cols, return_index=True, return_counts=True)
    return uniq, ys[first + counts // 2]


def _kernel_end(points: np.ndarray, j: int, fallback_slope: float) -> tuple[float, float, float]:
    """(x, y, slope) where the kernel ends on side ``j`` (0 = low x).

    A quadratic through the kernel pixels one to five mean thicknesses in
    from the end (never past the middle) gives the local center line. The
    first thickness is skipped because a slanted end cuts those columns
    short and pulls their centers sideways. From the curve point one
    thickness in, the tangent is followed to the farthest kernel pixel.
    """
    x = points[:, 0]
    x_min, x_max = float(x.min()), float(x.max())
    extent = x_max - x_min
    thickness = len(points) / (extent + 1.0)
    edge = x_min if j == 0 else x_max
    depth = np.abs(x - edge)
    inner = min(5.0 * thickness, 0.5 * extent)
    fit = points[(depth >= thickness) & (depth <= inner)]
    near = points[depth <= max(inner, thickness)]
    if len(fit) >= 3 and np.ptp(fit[:, 0]) >= 2.0:
        deg = 2 if np.ptp(fit[:, 0]) >= 1.5 * thickness else 1
        c = np.polyfit(fit[:, 0], fit[:, 1], deg)
        x0 = float(np.clip(edge + (thickness if j == 0 else -thickness), fit[:, 0].min(), fit[:, 0].max()))
        anchor = np.array([x0, np.polyval(c, x0)])
        slope = float(np.polyval(np.polyder(c), x0))
    else:
        anchor, slope = near.mean(axis=0), fallback_slope
    u = np.array([1.0, slope]) / np.hypot(1.0, slope)
    proj = (near - anchor) @ u
    end = anchor + u * (proj.min() if j == 0 else proj.max())
    return float(end[0]), float(end[1]), slope


def _frame_samples(points: np.ndarray, n: int) -> np.ndarray:
    """Middle-sample a point cloud already rotated so the text runs along +x.

    Sample ``i`` of ``n`` sits at ``lo + i * extent / (n + 1)`` and takes the
    median rotated y of the points within half a sample spacing of it (at
    least half a pixel), which evens out the staircase of a rotated raster.
    """
    x = points[:, 0]
    lo, hi = float(x.min()), float(x.max())
    spacing = (hi - lo) / (n + 1)
    half = max(0.5, 0.5 * spacing)
    out = np.empty((n, 2), dtype=float)
    for i in range(1, n + 1):
        target = lo + i * spacing
        band = np.abs(x - target) <= half
        if not band.any():
            band = np.abs(x - target) <= np.abs(x - target).min() + 0.5
        out[i - 1] = (target, np.median(points[band, 1]))
    return out


def _row_extremes(points: np.ndarray) -> np.ndarray:
    """First and last point of every pixel row; they carry the convex hull."""
    rows = points[:, 1]
    order = np.lexsort((points[:, 0], rows))
    rows = rows[order]
    first = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    last = np.r_[first[1:] - 1, len(rows) - 1]
    return points[order[np.r_[first, last]]]


def _envelope_angle(points: np.ndarray) -> float:
    """Direction of the long side of the minimum-area rectangle around ``points``.

    Oriented to point right (or down, for an exactly vertical side).
    """
    env = shapely.oriented_envelope(shapely.MultiPoint(_row_extremes(points)))
    coords = np.asarray(env.exterior.coords if env.geom_type == "Polygon" else env.coords)
    if len(coords) < 2:
        raise EmptyKernelError("kernel has zero extent")
    edges = np.diff(coords[:3], axis=0)
    edge = edges[np.argmax(np.hypot(edges[:, 0], edges[:, 1]))]
    if edge[0] < 0 or (edge[0] == 0 and edge[1] < 0):
        edge = -edge
    return wrap_degrees(float(np.rad2deg(np.arctan2(edge[1], edge[0]))))


def _trend(points: np.ndarray, phi: float, origin: Point) -> float | None:
    """Angle (degrees) of the line through the column medians of the middle span."""
    cols, med = _column_medians(rotate_points(points, -phi, origin))
    span = cols[-1] - cols[0]
    keep = (cols >= cols[0] + REFINE_TRIM * span) & (cols <= cols[-1] - REFINE_TRIM * span)
    if keep.sum() < 2:
        return None
    slope = np.polyfit(cols[keep] + 0.5, med[keep], 1)[0]
    return float(np.rad2deg(np.arctan(slope)))


def _refine_frame(points: np.ndarray, phi: float, origin: Point, passes: int) -> float:
    """Turn the frame until the column medians of the middle span show no trend.

    Secant steps on the residual trend, falling back to a plain turn when the
    last two residuals are too close to extrapolate from.
    """
    prev = None
    for _ in range(passes):
        turn = _trend(points, phi, origin)
        if turn is None or abs(turn) < REFINE_TOL:
            break
        step = turn
        if prev is not None:
            prev_phi, prev_turn = prev
            delta = (phi - prev_phi + 180.0) % 360.0 - 180.0
            if abs(prev_turn - turn) > 1e-9:
                secant = -turn * delta / (turn - prev_turn)
                if abs(secant) <= 4.0 * abs(turn) + 1e-9:
                    step = secant
        prev = (phi, turn)
        phi = wrap_degrees(phi + step)
    return phi


def _polyfit(x: np.ndarray, y: np.ndarray, degree: int) -> np.ndarray:
    usable = min(degree, len(np.unique(np.round(x, 9))) - 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", np.exceptions.RankWarning)
        fitted = np.polynomial.Polynomial.fit(x, y, usable).convert().coef
    coeffs = np.zeros(degree + 1)
    coeffs[: len(fitted)] = fitted
    return coeffs


def fit_main_vein(mask: RasterMask, n: int, degree: int | None = None, refine: int = REFINE_PASSES) -> MainVein:
    """Fit the main vein of a single-instance kernel mask.

    The frame starts along the long side of the kernel's minimum-area
    rectangle and is turned until the per-column medians of the kernel, seen
    in that frame, carry no linear trend. Sampling columns of the rotated
    kernel instead of image columns keeps a tilted kernel from being read as
    a curved one. ``n`` center points are then middle-sampled in the final
    frame and fitted with a degree-``degree`` polynomial.
    """
    if degree is None:
        degree = default_degree(n)
    if degree < 1:
        raise ValueError(f"polynomial degree must be >= 1, got {degree}")
    if n < degree + 1:
        raise UnderdeterminedFitError(f"{n} center points cannot fix a degree-{degree} polynomial")
    if n < 2:
        raise ValueError(f"need at least 2 center samples, got {n}")

    pts = mask.coordinates()
    if len(pts) == 0:
        raise EmptyKernelError("kernel mask is empty")
    if len(np.unique(pts, axis=0)) < 2:
        raise EmptyKernelError("kernel mask has zero extent")
    pad = float(mask.height)
    kernel_pts = pts + 0.5 + pad
    origin = Point(*(float(v) for v in kernel_pts.mean(axis=0)))
    phi = _refine_frame(kernel_pts, _envelope_angle(kernel_pts), origin, refine)

    frame_pts = rotate_points(kernel_pts, -phi, origin)
    samples = _frame_samples(frame_pts, n)
    x, y = samples[:, 0], samples[:, 1]
    coeffs = tuple(float(c) for c in _polyfit(x, y, degree))
    fit_range = (float(x.min()), float(x.max()))
    plain = MainVein(coeffs, degree, phi, origin, pad, fit_range, (float(frame_pts[:, 0].min()), float(frame_pts[:, 0].max())))
    ends, x_range = [], []
    for j in (0, 1):
        xe, ye, se = _kernel_end(frame_pts, j, float(plain.slope_at(plain.x_range[j])))
        x_range.append(xe)
        # short links to the kernel ends are too noisy to steer the vein; keep the polynomial there
        if abs(fit_range[j] - xe) < ANCHOR_MIN_RUN:
            ye, se = float(plain.y_at(xe)), float(plain.slope_at(xe))
        ends.append((ye, se))
    return MainVein(coeffs, degree, phi, origin, pad, fit_range, (x_range[0], x_range[1]), (ends[0], ends[1]))


def sample_positions(x_range: tuple[float, float], n: int) -> np.ndarray:
    if n < 2:
        raise ValueError(f"need at least 2 start points, got {n}")
    return np.linspace(x_range[0], x_range[1], n)


def sample_lateral_starts(
    mv: MainVein, n: int, x_range: tuple[float, float] | None = None
) -> list[StartPointSample]:
    """``n`` start points equidistant in the rotated frame, mapped to the image."""
    xs = sample_positions(mv.x_range if x_range is None else x_range, n)
    points, tangents = mv.evaluate(xs)
    return [StartPointSample(Point(float(p[0]), float(p[1])), float(t)) for p, t in zip(points, tangents)]
