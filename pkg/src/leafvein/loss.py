"""Training losses for the kernel map and the vein lengths, with analytic gradients.

Everything here is plain numpy on scalars or small arrays; the gradients
exist so they can be checked against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import RasterMask

DICE_EPS = 1.0
GRADIENT_TOLERANCE = 1e-4


class LossError(ValueError):
    pass


def _as_grid(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt.bits if isinstance(gt, RasterMask) else gt, dtype=float)
    if p.shape != g.shape:
        raise LossError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    if not np.all(np.isfinite(p)):
        raise LossError("prediction holds non-finite values")
    return p, g


def dice_loss(pred, gt) -> float:
    """Soft dice loss with smoothing 1: ``1 - (2 sum(p g) + 1) / (sum p + sum g + 1)``."""
    p, g = _as_grid(pred, gt)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise LossError("prediction probabilities must lie in [0, 1]")
    return _dice(p, g)


def _dice(p: np.ndarray, g: np.ndarray) -> float:
    num = 2.0 * float((p * g).sum()) + DICE_EPS
    den = float(p.sum() + g.sum()) + DICE_EPS
    return 1.0 - num / den


def dice_grad(pred, gt) -> np.ndarray:
    p, g = _as_grid(pred, gt)
    num = 2.0 * float((p * g).sum()) + DICE_EPS
    den = float(p.sum() + g.sum()) + DICE_EPS
    return -(2.0 * g * den - num) / (den * den)


def _check_lengths(*lengths: float) -> None:
    for v in lengths:
        if not (math.isfinite(v) and v > 0.0):
            raise LossError(f"lengths must be finite and positive, got {v!r}")


def nl_loss(l_pre: float, l_gt: float) -> float:
    """Negative log of the ratio of the smaller to the larger length (natural log)."""
    _check_lengths(l_pre, l_gt)
    return abs(math.log(l_pre) - math.log(l_gt))


def nl_grad(l_pre: float, l_gt: float) -> tuple[float, float]:
    """(d/dl_pre, d/dl_gt); zero at the kink where both lengths agree."""
    _check_lengths(l_pre, l_gt)
    sign = float(np.sign(math.log(l_pre) - math.log(l_gt)))
    return sign / l_pre, -sign / l_gt


def _check_scale(l_s: float, rho: float) -> None:
    if not (math.isfinite(l_s) and l_s > 0.0):
        raise LossError(f"short side must be positive, got {l_s!r}")
    if not (math.isfinite(rho) and rho > 0.0):
        raise LossError(f"rho must be positive, got {rho!r}")


def incentive_coeff(l_gt: float, l_s: float, rho: float = 1.0) -> float:
    """``tanh(rho * (1 - l_gt / l_s))``; lengths beyond ``l_s`` are clamped to it."""
    _check_scale(l_s, rho)
    if not (math.isfinite(l_gt) and l_gt >= 0.0):
        raise LossError(f"ground-truth length must be non-negative, got {l_gt!r}")
    return math.tanh(rho * (1.0 - min(l_gt, l_s) / l_s))


def incentive_grad(l_gt: float, l_s: float, rho: float = 1.0) -> float:
    """d lambda / d l_gt; zero on the clamped side."""
    _check_scale(l_s, rho)
    if l_gt > l_s:
        return 0.0
    z = rho * (1.0 - l_gt / l_s)
    return -rho / l_s / math.cosh(z) ** 2


def _samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise LossError("samples must be a T x M grid of (l_pre, l_gt) pairs")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise LossError("sample grid is empty")
    if not np.all(np.isfinite(arr)):
        raise LossError("sample grid holds non-finite values")
    return arr


def _supervised(arr: np.ndarray) -> np.ndarray:
    sup = arr[..., 1] > 0.0
    if np.any(arr[..., 0][sup] <= 0.0):
        raise LossError("predicted lengths must be positive where a ground-truth length exists")
    return sup


def global_incentive_loss(samples, l_s: float, rho: float = 1.0) -> float:
    """Mean over the T x M grid of ``lambda(l_gt) * nl(l_pre, l_gt)``.

    ``samples[t, m] = (l_pre, l_gt)``; cells with ``l_gt <= 0`` carry no
    supervision and add zero, but still count in the mean.
    """
    arr = _samples(samples)
    _check_scale(l_s, rho)
    sup = _supervised(arr)
    total = 0.0
    for l_pre, l_gt in arr[sup]:
        total += incentive_coeff(l_gt, l_s, rho) * nl_loss(l_pre, l_gt)
    return total / (arr.shape[0] * arr.shape[1])


def global_incentive_grad(samples, l_s: float, rho: float = 1.0) -> np.ndarray:
    """Gradient with the same shape as ``samples``: d/dl_pre in [..., 0], d/dl_gt in [..., 1]."""
    arr = _samples(samples)
    _check_scale(l_s, rho)
    sup = _supervised(arr)
    out = np.zeros_like(arr)
    scale = 1.0 / (arr.shape[0] * arr.shape[1])
    for t, m in zip(*np.nonzero(sup)):
        l_pre, l_gt = arr[t, m]
        lam = incentive_coeff(l_gt, l_s, rho)
        d_pre, d_gt = nl_grad(l_pre, l_gt)
        out[t, m, 0] = scale * lam * d_pre
        out[t, m, 1] = scale * (incentive_grad(l_gt, l_s, rho) * nl_loss(l_pre, l_gt) + lam * d_gt)
    return out


def per_sample_terms(samples, l_s: float, rho: float = 1.0) -> list[tuple[float, float]]:
    """(lambda, nl) for every supervised cell, row-major."""
    arr = _samples(samples)
    sup = _supervised(arr)
    return [(incentive_coeff(g, l_s, rho), nl_loss(p, g)) for p, g in arr[sup]]


@dataclass(frozen=True)
class LossBreakdown:
    l_mv: float
    l_lv_tv: float
    total: float
    per_sample: list[tuple[float, float]] = field(default_factory=list)


def total_loss(
    l_mv: float,
    l_lv_tv: float,
    alpha: float = 1.0,
    beta: float = 0.25,
    per_sample: Sequence[tuple[float, float]] = (),
) -> LossBreakdown:
    """Weighted sum of the kernel-map loss and the vein-length loss."""
    for name, v in (("l_mv", l_mv), ("l_lv_tv", l_lv_tv)):
        if not math.isfinite(v) or v < 0.0:
            raise LossError(f"{name} must be a finite non-negative loss, got {v!r}")
    return LossBreakdown(l_mv, l_lv_tv, alpha * l_mv + beta * l_lv_tv, list(per_sample))


def check_gradient(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    point,
    step: float = 1e-5,
) -> float:
    """Largest relative gap between ``grad(point)`` and central differences of ``f``.

    The difference step for a coordinate is ``step * max(1, |x|)``.

    Coordinates where both derivatives are below 1e-10 in magnitude count
    as exact.
    """
    if step <= 0.0:
        raise LossError("finite-difference step must be positive")
    x = np.array(point, dtype=float)
    analytic = np.asarray(grad(x), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(analytic)):
        raise LossError("analytic gradient is not finite")
    worst = 0.0
    for i in np.ndindex(x.shape):
        # relative step: large lengths would otherwise drown the difference in rounding
        h = step * max(1.0, abs(float(x[i])))
        hi, lo = x.copy(), x.copy()
        hi[i] += h
        lo[i] -= h
        f_hi, f_lo = f(hi), f(lo)
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise LossError(f"function is not finite near coordinate {i}")
        numeric = (f_hi - f_lo) / (2.0 * h)
        a = float(analytic[i])
        scale = max(abs(a), abs(numeric))
        if scale < 1e-10:
            continue
        worst = max(worst, abs(a - numeric) / scale)
    return worst


LOSS_NAMES = ("dice", "nl", "incentive", "global_incentive")


def gradient_suite(trials: int = 1000, seed: int = 0, flip: Sequence[str] = (), step: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error of each loss over ``trials`` random points.

    Names in ``flip`` get their analytic gradient negated, which must make
    the check fail.
    """
    if trials < 1:
        raise LossError("trials must be at least 1")
    unknown = set(flip) - set(LOSS_NAMES)
    if unknown:
        raise LossError(f"unknown loss name(s): {', '.join(sorted(unknown))}")
    rng = np.random.default_rng(seed)
    sign = {name: -1.0 if name in flip else 1.0 for name in LOSS_NAMES}
    worst = dict.fromkeys(LOSS_NAMES, 0.0)

    for _ in range(trials):
        gt = rng.random((8, 8)) < 0.4
        pred = rng.uniform(0.01, 0.99, (8, 8))
        err = check_gradient(lambda p: _dice(p, gt), lambda p: sign["dice"] * dice_grad(p, gt), pred, step)
        worst["dice"] = max(worst["dice"], err)

        pair = rng.uniform(0.5, 100.0, 2)
        while abs(math.log(pair[0] / pair[1])) < 1e-3:
            pair = rng.uniform(0.5, 100.0, 2)
        err = check_gradient(
            lambda v: nl_loss(v[0], v[1]), lambda v: sign["nl"] * np.array(nl_grad(v[0], v[1])), pair, step
        )
        worst["nl"] = max(worst["nl"], err)

        l_s = rng.uniform(32.0, 1024.0)
        rho = rng.uniform(0.2, 3.0)
        l_gt = np.array([rng.uniform(0.0, 0.99) * l_s])
        err = check_gradient(
            lambda v: incentive_coeff(v[0], l_s, rho),
            lambda v: sign["incentive"] * np.array([incentive_grad(v[0], l_s, rho)]),
            l_gt,
            step,
        )
        worst["incentive"] = max(worst["incentive"], err)

        t, m = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        grid = np.stack([rng.uniform(1.0, 0.9 * l_s, (t, m)), rng.uniform(1.0, 0.9 * l_s, (t, m))], axis=-1)
        err = check_gradient(
            lambda s: global_incentive_loss(s, l_s, rho),
            lambda s: sign["global_incentive"] * global_incentive_grad(s, l_s, rho),
            grid,
            step,
        )
        worst["global_incentive"] = max(worst["global_incentive"], err)
    return worst
