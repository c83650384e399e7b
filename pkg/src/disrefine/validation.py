"""Input validation helpers for arrays crossing public API boundaries.

All pixel math in this package is double precision. Helpers return float64
views/copies so downstream code never has to re-check dtype.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_float64(a, name: str = "array") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains NaN or Inf")
    return arr


def check_image(image, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) RGB image with intensities in [0, 1]."""
    arr = as_float64(image, name)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ShapeError(f"{name} intensities must lie in [0, 1]")
    return arr


def check_prob_mask(mask, name: str = "mask") -> np.ndarray:
    """Validate an (H, W) probability mask with values in [0, 1]."""
    arr = as_float64(mask, name)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2D (H, W), got shape {arr.shape}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ShapeError(f"{name} probabilities must lie in [0, 1]")
    return arr


def check_binary_mask(mask, name: str = "mask") -> np.ndarray:
    """Validate an (H, W) mask whose every element is exactly 0 or 1."""
    arr = as_float64(mask, name)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2D (H, W), got shape {arr.shape}")
    if arr.size and not np.all((arr == 0.0) | (arr == 1.0)):
        raise ShapeError(f"{name} must contain only 0/1 values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")


def check_five_channel(x, name: str = "input") -> np.ndarray:
    """Validate a (5, H, W) composite; channel 4 (box raster) must be 0/1."""
    arr = as_float64(x, name)
    if arr.ndim != 3 or arr.shape[0] != 5:
        raise ShapeError(f"{name} must have shape (5, H, W), got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ShapeError(f"{name} values must lie in [0, 1]")
    box_plane = arr[4]
    if not np.all((box_plane == 0.0) | (box_plane == 1.0)):
        raise ShapeError(f"{name} channel 4 must be a 0/1 raster")
    return arr
