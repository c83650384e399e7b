"""The six evaluation measures and the batch evaluator.

Algorithmic constants are pinned here (and mirrored by the naive test
oracles): F-threshold grid t_k = k/(threshold_count+1) with binarization
`pred >= t`, weighted-F diffusion kernel 7x7 sigma 5 with beta^2 = 1,
S-measure alpha = 0.5 with 1e-8 stabilizers, boundary-point counting via
Moore tracing + Douglas-Peucker epsilon = 2px. Nearest-foreground ties are
broken toward the smallest row-major index so results are bit-stable.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .coarse import erode_mask
from .core import MetricConfig
from .dataio import DatasetManifest, MetricReport
from .enrich import connected_components
from .errors import DisRefineError, EmptyMaskError
from .validation import check_binary_mask, check_prob_mask, check_same_shape

_EPS = 1e-8
_WFM_EPS = 1e-12
DP_EPSILON = 2.0


class MissingPredictionError(DisRefineError):
    """evaluate_dataset was given no prediction for some manifest ids."""


def mae(pred, gt) -> float:
    p = check_prob_mask(pred, "pred")
    g = check_binary_mask(gt, "gt")
    check_same_shape(p, g, "pred and gt")
    return float(np.mean(np.abs(p - g)))


def _thresholds(count: int) -> np.ndarray:
    return np.arange(1, count + 1, dtype=np.float64) / (count + 1)


def f_measure_curve(pred, gt, cfg: MetricConfig = MetricConfig()):
    """Per-threshold F values over the t_k grid and their maximum."""
    p = check_prob_mask(pred, "pred")
    g = check_binary_mask(gt, "gt")
    check_same_shape(p, g, "pred and gt")
    fg_mask = g > 0.5
    npos = int(fg_mask.sum())
    if npos == 0:
        raise EmptyMaskError("F-measure is undefined for an empty ground truth")
    thresholds = _thresholds(cfg.threshold_count)
    fg_sorted = np.sort(p[fg_mask])
    bg_sorted = np.sort(p[~fg_mask])
    tp = npos - np.searchsorted(fg_sorted, thresholds, side="left")
    fp = bg_sorted.size - np.searchsorted(bg_sorted, thresholds, side="left")
    pos = tp + fp
    precision = np.where(pos > 0, tp / np.maximum(pos, 1), 0.0)
    recall = tp / npos
    b2 = cfg.beta_squared
    denom = b2 * precision + recall
    curve = np.where(denom > 0, (1 + b2) * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return curve, float(curve.max())


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    ax = np.arange(size, dtype=np.float64) - half
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    k = np.exp(-(yy * yy + xx * xx) / (2.0 * sigma * sigma))
    return k / k.sum()


def _correlate_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    h, w = img.shape
    padded = np.pad(img, ((ph, ph), (pw, pw)))
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i : i + h, j : j + w]
    return out


def _nearest_foreground(fg_mask: np.ndarray, chunk_rows: int = 16):
    """Per-pixel (squared distance, flat index) of the nearest fg pixel.

    Ties go to the smallest row-major index, which is what argmin over the
    row-major-ordered foreground list yields.
    """
    h, w = fg_mask.shape
    fg_pos = np.argwhere(fg_mask)
    fy = fg_pos[:, 0].astype(np.float64)
    fx = fg_pos[:, 1].astype(np.float64)
    flat_fg = fg_pos[:, 0] * w + fg_pos[:, 1]
    d2 = np.empty((h, w), dtype=np.float64)
    idx = np.empty((h, w), dtype=np.int64)
    cols = np.arange(w, dtype=np.float64)
    for r0 in range(0, h, chunk_rows):
        r1 = min(r0 + chunk_rows, h)
        rows = np.arange(r0, r1, dtype=np.float64)
        dy = rows[:, None, None] - fy[None, None, :]
        dx = cols[None, :, None] - fx[None, None, :]
        dist2 = dy * dy + dx * dx
        j = dist2.argmin(axis=2)
        d2[r0:r1] = np.take_along_axis(dist2, j[..., None], axis=2)[..., 0]
        idx[r0:r1] = flat_fg[j]
    return d2, idx


def weighted_f_measure(pred, gt, cfg: MetricConfig = MetricConfig()) -> float:
    """Spatially weighted F with beta^2 = 1.

    False-negative errors are diffused by a 7x7 sigma-5 Gaussian over the
    foreground; background errors are weighted by 2 - exp(ln(0.5)/5 * dist)
    with dist the Euclidean distance to the nearest foreground pixel.
    """
    p = check_prob_mask(pred, "pred")
    g = check_binary_mask(gt, "gt")
    check_same_shape(p, g, "pred and gt")
    fg = g > 0.5
    if not fg.any():
        raise EmptyMaskError("weighted F-measure is undefined for an empty ground truth")
    bg = ~fg

    err = np.abs(p - g)
    d2, nearest = _nearest_foreground(fg)
    diffused_src = err.copy()
    diffused_src[bg] = err.reshape(-1)[nearest[bg]]
    blurred = _correlate_same(diffused_src, _gaussian_kernel(7, 5.0))
    min_err = err.copy()
    improve = fg & (blurred < err)
    min_err[improve] = blurred[improve]

    weight = np.ones_like(err)
    weight[bg] = 2.0 - np.exp(math.log(0.5) / 5.0 * np.sqrt(d2[bg]))
    weighted_err = min_err * weight

    n_fg = float(fg.sum())
    tpw = n_fg - float(weighted_err[fg].sum())
    fpw = float(weighted_err[bg].sum())
    recall = 1.0 - float(weighted_err[fg].mean())
    precision = tpw / (tpw + fpw + _WFM_EPS)
    return float(2.0 * precision * recall / (precision + recall + _WFM_EPS))


def _object_score(values: np.ndarray) -> float:
    x = float(values.mean())
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _ssim_block(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x = float(p.mean())
    y = float(g.mean())
    sx = float(((p - x) ** 2).sum()) / (n - 1 + _EPS)
    sy = float(((g - y) ** 2).sum()) / (n - 1 + _EPS)
    sxy = float(((p - x) * (g - y)).sum()) / (n - 1 + _EPS)
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0.0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0.0 else 0.0


def s_measure(pred, gt) -> float:
    """Structural similarity: 0.5 * object term + 0.5 * quadrant-SSIM term.

    Degenerate GTs use limiting cases: 1 - mean(pred) for an empty GT and
    mean(pred) for a full one. The result is clamped to [0, 1].
    """
    p = check_prob_mask(pred, "pred")
    g = check_binary_mask(gt, "gt")
    check_same_shape(p, g, "pred and gt")
    fg = g > 0.5
    mu = float(fg.mean())
    if mu == 0.0:
        return float(np.clip(1.0 - p.mean(), 0.0, 1.0))
    if mu == 1.0:
        return float(np.clip(p.mean(), 0.0, 1.0))

    s_obj = mu * _object_score(p[fg]) + (1.0 - mu) * _object_score((1.0 - p)[~fg])

    h, w = g.shape
    total = float(fg.sum())
    ybar = float((fg.sum(axis=1) * np.arange(h)).sum()) / total
    xbar = float((fg.sum(axis=0) * np.arange(w)).sum()) / total
    ysplit = int(math.floor(ybar + 0.5)) + 1  # half-up rounding, 1-based split
    xsplit = int(math.floor(xbar + 0.5)) + 1
    gf = fg.astype(np.float64)
    s_reg = 0.0
    for sy, sx in (
        (slice(0, ysplit), slice(0, xsplit)),
        (slice(0, ysplit), slice(xsplit, None)),
        (slice(ysplit, None), slice(0, xsplit)),
        (slice(ysplit, None), slice(xsplit, None)),
    ):
        pq = p[sy, sx]
        if pq.size == 0:
            continue
        s_reg += (pq.size / (h * w)) * _ssim_block(pq, gf[sy, sx])

    return float(np.clip(0.5 * s_obj + 0.5 * s_reg, 0.0, 1.0))


def e_measure(pred, gt, cfg: MetricConfig = MetricConfig()) -> float:
    """Threshold-averaged alignment between mean-centered binary maps."""
    p = check_prob_mask(pred, "pred")
    g = check_binary_mask(gt, "gt")
    check_same_shape(p, g, "pred and gt")
    phi_g = g - g.mean()
    values = np.empty(cfg.threshold_count, dtype=np.float64)
    for k, t in enumerate(_thresholds(cfg.threshold_count)):
        pb = (p >= t).astype(np.float64)
        phi_p = pb - pb.mean()
        denom = phi_g * phi_g + phi_p * phi_p
        xi = np.zeros_like(denom)
        nz = denom > 0
        xi[nz] = 2.0 * phi_g[nz] * phi_p[nz] / denom[nz]
        values[k] = float(np.mean((1.0 + xi) ** 2 / 4.0))
    return float(values.mean())


# ---------------------------------------------------------------------------
# Boundary-point correction effort
# ---------------------------------------------------------------------------

# Moore neighborhood, clockwise: W, NW, N, NE, E, SE, S, SW.
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def trace_boundary(region: np.ndarray) -> list[tuple[int, int]]:
    """Ordered outer-boundary pixels of one 8-connected component.

    Moore-neighbor tracing, clockwise, starting at the smallest (row, col)
    pixel; terminates when the (pixel, backtrack) start state repeats.
    """
    h, w = region.shape
    pts = np.argwhere(region)
    start = (int(pts[0][0]), int(pts[0][1]))
    back0 = (start[0], start[1] - 1)  # west of start, guaranteed outside
    boundary = [start]
    p, back = start, back0
    limit = 4 * len(pts) + 8
    while len(boundary) <= limit:
        d0 = _MOORE.index((back[0] - p[0], back[1] - p[1]))
        found = None
        new_back = back
        for step in range(1, 9):
            dr, dc = _MOORE[(d0 + step) % 8]
            q = (p[0] + dr, p[1] + dc)
            if 0 <= q[0] < h and 0 <= q[1] < w and region[q]:
                found = q
                pr, pc = _MOORE[(d0 + step - 1) % 8]
                new_back = (p[0] + pr, p[1] + pc)
                break
        if found is None:
            break  # isolated pixel
        if found == start and new_back == back0:
            break
        boundary.append(found)
        p, back = found, new_back
    return boundary


def _perpendicular_distance(pt, a, b) -> float:
    if a == b:
        return math.hypot(pt[0] - a[0], pt[1] - a[1])
    cross = (b[0] - a[0]) * (pt[1] - a[1]) - (b[1] - a[1]) * (pt[0] - a[0])
    return abs(cross) / math.hypot(b[0] - a[0], b[1] - a[1])


def _dp_kept_count(points: list[tuple[int, int]], eps: float) -> int:
    """Points kept by Douglas-Peucker on an open chain, endpoints included."""
    n = len(points)
    keep = [False] * n
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        best_d, best_k = -1.0, -1
        for k in range(i + 1, j):
            d = _perpendicular_distance(points[k], points[i], points[j])
            if d > best_d:
                best_d, best_k = d, k
        if best_d > eps:
            keep[best_k] = True
            stack.append((i, best_k))
            stack.append((best_k, j))
    return sum(keep)


def dominant_point_count(polygon: list[tuple[int, int]], eps: float = DP_EPSILON) -> int:
    """Dominant points of a closed boundary polygon.

    The polygon is split at the vertex farthest from its first point and each
    half is simplified independently; the two shared endpoints are counted
    once each.
    """
    n = len(polygon)
    if n <= 3:
        return n
    p0 = polygon[0]
    dists = [(q[0] - p0[0]) ** 2 + (q[1] - p0[1]) ** 2 for q in polygon]
    split = int(np.argmax(dists))
    first = polygon[: split + 1]
    second = polygon[split:] + [p0]
    return _dp_kept_count(first, eps) + _dp_kept_count(second, eps) - 2


def hce(pred, gt, cfg: MetricConfig = MetricConfig()) -> int:
    """Count of dominant boundary points over erosion-relaxed error regions.

    The prediction is binarized at 0.5; false-positive and false-negative
    regions are eroded with a square element of radius hce_gamma, labeled
    8-connected, and each component's traced outer boundary is simplified
    with Douglas-Peucker (epsilon 2px). The total kept-point count is the
    correction effort. This is a documented approximation, flagged in report
    metadata.
    """
    p = check_prob_mask(pred, "pred")
    g = check_binary_mask(gt, "gt")
    check_same_shape(p, g, "pred and gt")
    pb = p >= 0.5
    fg = g > 0.5
    total = 0
    for region in (pb & ~fg, ~pb & fg):
        relaxed = erode_mask(region.astype(np.float64), cfg.hce_gamma)
        if not relaxed.any():
            continue
        for comp in connected_components(relaxed, connectivity=8):
            total += dominant_point_count(trace_boundary(comp > 0.5))
    return total


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------


def _max_workers() -> int:
    env = os.environ.get("DIS_REFINE_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def evaluate_sample(pred, gt, cfg: MetricConfig = MetricConfig()):
    """All six metrics for one pair; empty-GT F-measures come back as None."""
    record: dict[str, float | None] = {
        "mae": mae(pred, gt),
        "s": s_measure(pred, gt),
        "e": e_measure(pred, gt, cfg),
        "hce": float(hce(pred, gt, cfg)),
    }
    warnings = []
    try:
        _, record["fmax"] = f_measure_curve(pred, gt, cfg)
        record["fw"] = weighted_f_measure(pred, gt, cfg)
    except EmptyMaskError:
        record["fmax"] = None
        record["fw"] = None
        warnings.append("empty ground truth: fmax/fw undefined, excluded from aggregates")
    return record, warnings


def evaluate_dataset(
    predictions: dict[str, np.ndarray],
    manifest: DatasetManifest,
    cfg: MetricConfig = MetricConfig(),
) -> MetricReport:
    """Evaluate every manifest sample; deterministic regardless of parallelism.

    Per-sample work runs on a thread pool capped by DIS_REFINE_THREADS;
    aggregation always happens in manifest order.
    """
    missing = [s.id for s in manifest if s.id not in predictions]
    if missing:
        raise MissingPredictionError(f"missing predictions for: {', '.join(missing)}")

    def one(sample):
        gt = sample.load_gt(cfg.binarize_threshold)
        record, warns = evaluate_sample(predictions[sample.id], gt, cfg)
        return sample.id, record, warns

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        results = list(pool.map(one, manifest.samples))

    per_sample = {}
    warnings = []
    for sid, record, warns in results:
        per_sample[sid] = record
        warnings.extend(f"{sid}: {w}" for w in warns)
    return MetricReport.from_per_sample(per_sample, warnings=warnings)
