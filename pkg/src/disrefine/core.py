"""Domain types and the five-channel input composition.

Array conventions used throughout the package:
  - images: (H, W, 3) float64, intensities in [0, 1]
  - masks (binary or probability): (H, W) float64
  - composite network input: (5, H, W) float64, channels ordered
    [R, G, B, coarse-mask, box-raster]

All types are immutable value objects; all operations are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidBoxError
from .validation import check_image, check_prob_mask, check_same_shape


@dataclass(frozen=True)
class PromptBox:
    """Axis-aligned box in pixel coordinates, inclusive on all sides, 0-indexed."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise InvalidBoxError(f"box coordinate {name}={v!r} is not an integer")
            object.__setattr__(self, name, int(v))
        if self.x0 < 0 or self.y0 < 0 or self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidBoxError(
                f"box ({self.x0},{self.y0},{self.x1},{self.y1}) must satisfy "
                "0 <= x0 <= x1 and 0 <= y0 <= y1"
            )

    def validate(self, height: int, width: int) -> None:
        """Check the box lies inside an image extent; raise InvalidBoxError if not."""
        if self.x1 >= width or self.y1 >= height:
            raise InvalidBoxError(
                f"box ({self.x0},{self.y0},{self.x1},{self.y1}) exceeds "
                f"image extent {width}x{height}"
            )

    def flipped_horizontal(self, width: int) -> "PromptBox":
        return PromptBox(width - 1 - self.x1, self.y0, width - 1 - self.x0, self.y1)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four-term composite training loss."""

    lambda1: float = 20.0  # pixel cross-entropy
    lambda2: float = 0.5  # soft-IoU
    lambda3: float = 1.0  # intermediate-feature MSE
    lambda4: float = 1e-6  # orthogonality regularizer

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class MetricConfig:
    """Constants shared by the evaluation metrics and GT binarization."""

    beta_squared: float = 0.3  # F-measure beta^2 for the threshold sweep
    threshold_count: int = 255
    hce_gamma: int = 5  # erosion relaxation radius in pixels
    binarize_threshold: float = 128.0 / 255.0

    def __post_init__(self):
        if self.threshold_count < 1:
            raise ValueError("threshold_count must be >= 1")
        if self.hce_gamma < 0:
            raise ValueError("hce_gamma must be >= 0")
        if not (0.0 < self.binarize_threshold < 1.0):
            raise ValueError("binarize_threshold must lie in (0, 1)")


def rasterize_prompt_box(box: PromptBox, height: int, width: int) -> np.ndarray:
    """Render a box as an (H, W) 0/1 raster; 1 inside the box, inclusive."""
    box.validate(height, width)
    mask = np.zeros((height, width), dtype=np.float64)
    mask[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1] = 1.0
    return mask


def compose_five_channel(image, coarse, box: PromptBox) -> np.ndarray:
    """Stack [R, G, B, coarse-mask, box-raster] into a (5, H, W) input.

    No resampling is performed: image and coarse mask must already share the
    same extent, and the box must be valid for it.
    """
    img = check_image(image)
    cm = check_prob_mask(coarse, "coarse")
    check_same_shape(img[:, :, 0], cm, "image and coarse mask")
    h, w = cm.shape
    raster = rasterize_prompt_box(box, h, w)
    return np.stack([img[:, :, 0], img[:, :, 1], img[:, :, 2], cm, raster])
