"""The four training-loss terms, each returning (value, closed-form gradient).

Reductions use numpy's fixed pairwise summation, so values are reproducible
across runs and thread counts.
"""
from __future__ import annotations

import numpy as np

from .core import LossWeights
from .errors import NumericError, ShapeError
from .validation import check_same_shape

BCE_CLAMP_EPS = 1e-7


def bce_loss(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over pixels.

    Predictions are clamped to [eps, 1-eps]; the gradient is evaluated on the
    clamped values, i.e. (p - y) / (M * p * (1 - p)).
    """
    check_same_shape(pred, gt, "pred and gt")
    p = np.clip(pred, BCE_CLAMP_EPS, 1.0 - BCE_CLAMP_EPS)
    m = p.size
    value = float(-np.sum(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p)) / m)
    grad = (p - gt) / (m * p * (1.0 - p))
    return value, grad


def iou_loss(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Soft intersection-over-union loss, 1 - I/U.

    When both masks are empty (U = 0) the loss is defined as 0 with zero
    gradient: empty agreement is perfect agreement.
    """
    check_same_shape(pred, gt, "pred and gt")
    inter = float(np.sum(pred * gt))
    union = float(np.sum(pred) + np.sum(gt) - inter)
    if union == 0.0:
        return 0.0, np.zeros_like(pred)
    value = 1.0 - inter / union
    # d(1 - I/U)/dp_i with dI/dp_i = y_i, dU/dp_i = 1 - y_i
    grad = -(gt * union - inter * (1.0 - gt)) / (union * union)
    return float(value), grad


def mse_feature_loss(features, targets) -> tuple[float, list[np.ndarray]]:
    """Stage-averaged MSE between feature maps and fixed targets.

    L = (1/K) sum_k mean((f_k - t_k)^2); targets carry no gradient.
    """
    if len(features) != len(targets):
        raise ShapeError(f"{len(features)} feature maps vs {len(targets)} targets")
    k = len(features)
    value = 0.0
    grads = []
    for f, t in zip(features, targets):
        check_same_shape(f, t, "feature map and target")
        diff = f - t
        value += float(np.mean(diff * diff))
        grads.append(2.0 * diff / (k * f.size))
    return value / k, grads


def ortho_loss(layers) -> tuple[float, list[np.ndarray]]:
    """Sum over layers of ||W W^T - E||_F (unsquared Frobenius norm).

    Gradient per layer is (N + N^T) W with N = G/||G||_F and G = W W^T - E;
    at the singular point ||G||_F = 0 the gradient is defined as 0.
    """
    if not layers:
        raise ShapeError("ortho_loss requires at least one layer")
    value = 0.0
    grads = []
    for w in layers:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeError(f"layer weights must be a nonempty 2D matrix, got {w.shape}")
        g = w @ w.T - np.eye(w.shape[0])
        norm = float(np.sqrt(np.sum(g * g)))
        value += norm
        if norm == 0.0:
            grads.append(np.zeros_like(w))
        else:
            n = g / norm
            grads.append((n + n.T) @ w)
    return value, grads


def total_loss(bce: float, iou: float, mse: float, ortho: float, w: LossWeights) -> float:
    """Weighted sum lambda1*bce + lambda2*iou + lambda3*mse + lambda4*ortho."""
    for name, value in (("bce", bce), ("iou", iou), ("mse", mse), ("ortho", ortho)):
        if not np.isfinite(value):
            raise NumericError(f"loss component {name} is not finite: {value}")
    return w.lambda1 * bce + w.lambda2 * iou + w.lambda3 * mse + w.lambda4 * ortho
