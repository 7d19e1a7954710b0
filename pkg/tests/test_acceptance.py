"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line to the
terminal, even under pytest's output capture. Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import math
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from leafvein.analysis import KINDS, synth_corpus, upper_bound_sweep  # noqa: E402
from leafvein.cli import main  # noqa: E402
from leafvein.codec import roundtrip_iou  # noqa: E402
from leafvein.config import LvtConfig  # noqa: E402
from leafvein.datasets import (  # noqa: E402
    FORMATS,
    Annotation,
    AnnotationParseError,
    parse_icdar15,
    parse_msra,
    parse_polyline_format,
    serialize_icdar15,
    serialize_msra,
    serialize_polyline,
)
from leafvein.geometry import PolarGrid, Polygon, RasterMask, rasterize, ray_to_contour_distance, rotate_points  # noqa: E402
from leafvein.loss import (  # noqa: E402
    dice_grad,
    dice_loss,
    global_incentive_grad,
    global_incentive_loss,
    incentive_coeff,
    incentive_grad,
    nl_grad,
    nl_loss,
)
from leafvein.mainvein import fit_main_vein, sample_lateral_starts  # noqa: E402
from leafvein.veins import rectify_direction  # noqa: E402

CANVAS = (512, 512)
TREND_COUNT = 150
TREND_SEED = 7


@pytest.fixture
def report(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        if capman is None:
            print(line)
        else:
            with capman.global_and_fixture_disabled():
                print("\n" + line)
        return ok

    return emit


def random_rects(count, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        t = rng.uniform(12.0, 40.0)
        length = t * rng.uniform(1.0, 10.0)
        theta = rng.uniform(0.0, 360.0)
        box = np.array([(-length / 2, -t / 2), (length / 2, -t / 2), (length / 2, t / 2), (-length / 2, t / 2)])
        center = rng.uniform(length / 2 + 10, 512 - length / 2 - 10, 2)
        out.append(Polygon(rotate_points(box, theta, (0.0, 0.0)) + center))
    return out


def test_criterion_1_upper_bound(report):
    rects = random_rects(1000, 1)
    sines = synth_corpus("sine_ribbon", 500, 1)
    start = time.process_time()
    rect_ious = np.array([roundtrip_iou(p, LvtConfig(n_d=8, n_p=5), CANVAS) for p in rects])
    sine_ious = np.array([roundtrip_iou(p, LvtConfig(n_d=16, n_p=7), CANVAS) for p in sines])
    elapsed = time.process_time() - start
    ok = rect_ious.mean() >= 0.96 and rect_ious.min() >= 0.90 and sine_ious.mean() >= 0.90 and elapsed < 60.0
    detail = (
        f"rect mean {rect_ious.mean():.4f} min {rect_ious.min():.4f}; "
        f"sine mean {sine_ious.mean():.4f}; {elapsed:.1f} s cpu"
    )
    assert report(1, ok, detail), detail


def test_criterion_2_monotone_trend(report):
    problems, summary = [], []
    for kind in KINDS:
        corpus = synth_corpus(kind, TREND_COUNT, TREND_SEED)
        sweep = upper_bound_sweep(corpus, [4, 8, 16], [2, 3, 5], threads=1)
        mean = {(r.n_d, r.n_p): r.mean for r in sweep.rows}
        for d in (4, 8, 16):
            for a, b in ((2, 3), (3, 5)):
                if mean[(d, b)] < mean[(d, a)] - 0.01:
                    problems.append(f"{kind} n_d={d} n_p {a}->{b}: {mean[(d, a)]:.4f}->{mean[(d, b)]:.4f}")
        for p in (2, 3, 5):
            for a, b in ((4, 8), (8, 16)):
                if mean[(b, p)] < mean[(a, p)] - 0.01:
                    problems.append(f"{kind} n_p={p} n_d {a}->{b}: {mean[(a, p)]:.4f}->{mean[(b, p)]:.4f}")
        summary.append(f"{kind} {min(mean.values()):.3f}-{max(mean.values()):.3f}")
    detail = "; ".join(summary) + ("" if not problems else " | violations: " + ", ".join(problems))
    assert report(2, not problems, detail), detail


def test_criterion_3_rectification(report):
    mismatches, checked = 0, 0
    for m in (4, 8, 16, 24, 32):
        grid = PolarGrid(m)
        for k in range(720):
            alpha = 0.5 * k
            checked += 1
            if abs(rectify_direction(alpha, grid) - oracles.nearest_grid_angle(alpha, m)) > 1e-9:
                mismatches += 1
    detail = f"{mismatches} mismatches over {checked} angles"
    assert report(3, mismatches == 0, detail), detail


def test_criterion_4_ray_length(report):
    r = random.Random(4)
    worst, n = 0.0, 0
    while n < 10_000:
        verts = oracles.star_polygon(r, r.randint(3, 16), center=(256.0, 256.0), radius=r.uniform(20, 240))
        poly = Polygon(verts)
        x0, y0, x1, y1 = poly.bounds()
        for _ in range(10):
            p = (r.uniform(x0, x1), r.uniform(y0, y1))
            if not oracles.inside(p, verts):
                continue
            a = r.uniform(0.0, 360.0)
            worst = max(worst, abs(ray_to_contour_distance(p, a, poly) - oracles.first_hit(p, a, verts)))
            n += 1
    detail = f"max |error| {worst:.2e} px over {n} triples"
    assert report(4, worst <= 1e-6, detail), detail


def rotate_mask(mask, theta, center):
    h, w = mask.bits.shape
    rows, cols = np.mgrid[0:h, 0:w]
    centers = np.stack([cols + 0.5, rows + 0.5], axis=-1).reshape(-1, 2)
    src = np.floor(rotate_points(centers, -theta, center)).astype(int)
    ok = (src[:, 0] >= 0) & (src[:, 0] < w) & (src[:, 1] >= 0) & (src[:, 1] < h)
    out = np.zeros(h * w, dtype=bool)
    out[ok] = mask.bits[src[ok, 1], src[ok, 0]]
    return RasterMask(out.reshape(h, w))


def start_points(mask, n):
    return np.array([s.point for s in sample_lateral_starts(fit_main_vein(mask, n), n)])


def test_criterion_5_mos_equivariance(report):
    c = (256.0, 256.0)
    shapes = []
    for length, t in ((200, 24), (300, 16), (120, 30)):
        shapes.append(np.array([(-length / 2, -t / 2), (length / 2, -t / 2), (length / 2, t / 2), (-length / 2, t / 2)]))
    x = np.linspace(-150, 150, 60)
    y = 20 * np.sin(x / 50)
    shapes.append(np.vstack([np.stack([x, y - 10], 1), np.stack([x, y + 10], 1)[::-1]]))
    worst = 0.0
    for verts in shapes:
        for base in (0.0, 7.0, 23.0):
            mask = rasterize(Polygon(rotate_points(verts, base, (0.0, 0.0)) + c), *CANVAS)
            for n in (2, 3, 5, 7, 9):
                s0 = start_points(mask, n)
                for theta in (15, 30, 45, 60, 90):
                    s1 = start_points(rotate_mask(mask, theta, c), n)
                    expected = rotate_points(s0, theta, c)
                    # the order along the vein may flip with the frame
                    err = min(np.hypot(*(s1 - expected).T).max(), np.hypot(*(s1[::-1] - expected).T).max())
                    worst = max(worst, err)
    detail = f"max start-point deviation {worst:.3f} px"
    assert report(5, worst <= 2.0, detail), detail


def central(f, x, step):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        h = step * max(1.0, abs(x[i]))
        a, b = x.copy(), x.copy()
        a[i] += h
        b[i] -= h
        out[i] = (f(a) - f(b)) / (2 * h)
    return out


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    keep = scale > 1e-10
    return float(np.max(np.abs(a - n)[keep] / scale[keep], initial=0.0))


def test_criterion_6_losses(report):
    gt4 = np.zeros((4, 4), bool)
    gt4[0] = True
    spots = [
        abs(dice_loss(np.zeros((4, 4)), gt4) - 0.8),
        abs(nl_loss(2.0, 1.0) - math.log(2.0)),
        abs(incentive_coeff(320.0, 640.0) - math.tanh(0.5)),
    ]
    spots_ok = max(spots) <= 1e-9 and abs(math.tanh(0.5) - 0.462117) < 1e-6
    rng = np.random.default_rng(6)
    worst = dict.fromkeys(("dice", "nl", "incentive", "global_incentive"), 0.0)
    for _ in range(1000):
        gt = rng.random((8, 8)) < 0.4
        pred = rng.uniform(0.01, 0.99, (8, 8))
        fd = central(lambda p: 1 - (2 * (p * gt).sum() + 1) / (p.sum() + gt.sum() + 1), pred, 1e-5)
        worst["dice"] = max(worst["dice"], rel_error(dice_grad(pred, gt), fd))

        a, b = rng.uniform(0.5, 100.0, 2)
        while abs(math.log(a / b)) < 1e-3:
            a, b = rng.uniform(0.5, 100.0, 2)
        fd = central(lambda v: -math.log(min(v) / max(v)), [a, b], 1e-5)
        worst["nl"] = max(worst["nl"], rel_error(nl_grad(a, b), fd))

        l_s, rho = rng.uniform(32.0, 1024.0), rng.uniform(0.2, 3.0)
        l_gt = rng.uniform(0.01, 0.99) * l_s
        fd = central(lambda v: math.tanh(rho * (1 - v[0] / l_s)), [l_gt], 1e-5)
        worst["incentive"] = max(worst["incentive"], rel_error([incentive_grad(l_gt, l_s, rho)], fd))

        t, m = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        grid = rng.uniform(1.0, 0.9 * l_s, (t, m, 2))

        def glob(s):
            terms = [math.tanh(rho * (1 - q / l_s)) * abs(math.log(p / q)) for p, q in s.reshape(-1, 2)]
            return sum(terms) / (t * m)

        fd = central(glob, grid, 1e-5)
        worst["global_incentive"] = max(worst["global_incentive"], rel_error(global_incentive_grad(grid, l_s, rho), fd))
    grads_ok = max(worst.values()) <= 1e-4
    # the oracle losses above must agree with the package too
    same = abs(global_incentive_loss([[(2.0, 1.0)]], 640.0) - math.tanh(1 - 1 / 640) * math.log(2)) < 1e-12
    detail = f"spot max err {max(spots):.1e}; grad rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(6, spots_ok and grads_ok and same, detail), detail


def test_criterion_7_parsers(report):
    rng = random.Random(7)
    crashes = []
    alphabet = b"0123456789,.-+ e#\t\r\nabcxyz\xef\xbb\xbf\xff"
    for fmt, parser in sorted(FORMATS.items()):
        for i in range(100_000):
            if i % 2:
                line = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 80)))
            else:
                line = bytes(rng.choice(alphabet) for _ in range(rng.randint(0, 80)))
            try:
                parser(line)
            except AnnotationParseError:
                pass
            except Exception as exc:  # noqa: BLE001
                crashes.append(f"{fmt}: {type(exc).__name__} on {line!r}")

    mismatches = 0
    for _ in range(500):
        quad = Annotation(Polygon(oracles.star_polygon(rng, 4)), rng.choice(["w", "###", "a b"]), True)
        quad = Annotation(quad.polygon, quad.transcription, quad.transcription != "###")
        line = serialize_icdar15(quad)
        if serialize_icdar15(parse_icdar15(line)) != line:
            mismatches += 1
        poly = Annotation(Polygon(oracles.star_polygon(rng, rng.randint(7, 20))), None)
        line = serialize_polyline(poly)
        if serialize_polyline(parse_polyline_format(line, 7)) != line:
            mismatches += 1
        msra = parse_msra(f"{rng.randint(0, 99)} {rng.randint(0, 1)} {rng.uniform(0, 400)!r} {rng.uniform(0, 400)!r} "
                          f"{rng.uniform(2, 200)!r} {rng.uniform(2, 60)!r} {rng.uniform(-3, 3)!r}")
        again = parse_msra(serialize_msra(msra))
        if not np.allclose(again.polygon.vertices, msra.polygon.vertices, atol=1e-9) or again.care != msra.care:
            mismatches += 1
    detail = f"{len(crashes)} crashes over {4 * 100_000} fuzz lines; {mismatches} roundtrip mismatches"
    assert report(7, not crashes and mismatches == 0, detail), detail + "\n" + "\n".join(crashes[:5])


def test_criterion_8_determinism(report, tmp_path):
    args = ["sweep", "--synthetic", "wave_word:40:seed=3", "--grid", "n_d=4,8,16;n_p=2,3,5,7"]
    one, four = tmp_path / "t1", tmp_path / "t4"
    codes = (main(args + ["--threads", "1", "--out", str(one)]), main(args + ["--threads", "4", "--out", str(four)]))
    same = all((one / f).read_bytes() == (four / f).read_bytes() for f in ("sweep.json", "sweep.txt", "manifest.json"))
    detail = f"exit codes {codes}; reports byte-identical: {same}"
    assert report(8, codes == (0, 0) and same, detail), detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
