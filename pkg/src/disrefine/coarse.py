"""Stage-1 stand-in: seeded degradation of GT masks, plus external-mask ingestion.

The degrader produces plausibly coarse inputs for the refiner (soft
boundaries, over/under-segmentation, missing parts, spurious regions) so the
second stage can be trained and benchmarked without a real promptable
segmenter. Externally computed coarse masks can replace it via files.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dataio import DatasetManifest, write_mask
from .enrich import connected_components
from .errors import IngestionError
from .validation import check_binary_mask


@dataclass(frozen=True)
class DegradeParams:
    """Knobs of the seeded degradation operator; all draws come from `seed`."""

    seed: int = 0
    dilate_erode_radius: int = 1  # max sampled square-element radius, 0..3
    boundary_blur_sigma: float = 1.0
    threshold: float = 0.5  # binarization cutoff used for component steps
    drop_component_prob: float = 0.0
    spurious_blob_prob: float = 0.0

    def __post_init__(self):
        if self.dilate_erode_radius < 0:
            raise ValueError("dilate_erode_radius must be >= 0")
        for name in ("drop_component_prob", "spurious_blob_prob"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1)^2 square element; outside counts as 0."""
    if radius <= 0:
        return np.array(mask, dtype=np.float64)
    padded = np.pad(np.asarray(mask, dtype=np.float64), radius, constant_values=0.0)
    out = np.zeros_like(np.asarray(mask, dtype=np.float64))
    h, w = out.shape
    for dr in range(2 * radius + 1):
        for dc in range(2 * radius + 1):
            np.maximum(out, padded[dr : dr + h, dc : dc + w], out=out)
    return out


def erode_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion with a (2r+1)^2 square element; outside counts as 0."""
    if radius <= 0:
        return np.array(mask, dtype=np.float64)
    padded = np.pad(np.asarray(mask, dtype=np.float64), radius, constant_values=0.0)
    out = np.ones_like(np.asarray(mask, dtype=np.float64))
    h, w = out.shape
    for dr in range(2 * radius + 1):
        for dc in range(2 * radius + 1):
            np.minimum(out, padded[dr : dr + h, dc : dc + w], out=out)
    return out


def _box_blur_1d(values: np.ndarray, radius: int, axis: int) -> np.ndarray:
    padded = np.pad(
        values, [(radius, radius) if ax == axis else (0, 0) for ax in range(values.ndim)]
    )
    out = np.zeros_like(values)
    n = values.shape[axis]
    for offset in range(2 * radius + 1):
        sl = [slice(None)] * values.ndim
        sl[axis] = slice(offset, offset + n)
        out += padded[tuple(sl)]
    return out / (2 * radius + 1)


def box_blur(mask: np.ndarray, sigma: float, passes: int = 3) -> np.ndarray:
    """Separable box blur repeated `passes` times, approximating a Gaussian.

    The box radius solves r^2 + r = sigma^2 (variance of 3 stacked boxes);
    sigma <= ~0.7 rounds to radius 0, which is a no-op. Zero padding at the
    borders, constant divisor.
    """
    out = np.asarray(mask, dtype=np.float64).copy()
    radius = int(round((-1.0 + math.sqrt(1.0 + 4.0 * sigma * sigma)) / 2.0))
    if radius <= 0:
        return out
    for _ in range(passes):
        out = _box_blur_1d(out, radius, axis=0)
        out = _box_blur_1d(out, radius, axis=1)
    return out


def _random_ellipse(rng, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cx = rng.uniform(0, w)
    cy = rng.uniform(0, h)
    a = rng.uniform(2.0, max(3.0, w / 8.0))
    b = rng.uniform(2.0, max(3.0, h / 8.0))
    theta = rng.uniform(0.0, math.pi)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.float64)


def degrade_mask(gt, params: DegradeParams) -> np.ndarray:
    """Corrupt a GT mask into a coarse probability mask.

    In order: (1) seeded dilation-or-erosion at a sampled radius, (2) 3-pass
    box blur approximating a Gaussian of boundary_blur_sigma, (3) with
    drop_component_prob, removal of one random component, (4) with
    spurious_blob_prob, one random ellipse blob added in the background.
    Fully determined by (gt, params).
    """
    arr = check_binary_mask(gt, "gt")
    rng = np.random.default_rng(params.seed)
    out = arr.copy()

    dilate = bool(rng.integers(0, 2) == 0)
    radius = int(rng.integers(0, params.dilate_erode_radius + 1))
    if radius > 0:
        out = dilate_mask(out, radius) if dilate else erode_mask(out, radius)

    out = box_blur(out, params.boundary_blur_sigma)

    if rng.random() < params.drop_component_prob:
        comps = connected_components((out >= params.threshold).astype(np.float64))
        if comps:
            victim = comps[int(rng.integers(0, len(comps)))]
            out = out * (1.0 - victim)

    if rng.random() < params.spurious_blob_prob:
        h, w = arr.shape
        blob = _random_ellipse(rng, h, w) * (arr == 0.0)
        out = np.maximum(out, blob)

    return np.clip(out, 0.0, 1.0)


def sample_seed(seed: int, sample_id: str) -> int:
    """Stable per-sample seed derivation (Python's hash() is salted)."""
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def degrade_manifest(
    manifest: DatasetManifest,
    params: DegradeParams,
    out_dir=None,
    binarize_threshold: float | None = None,
) -> DatasetManifest:
    """Degrade every sample's GT into a coarse mask, per-sample seeded.

    With `out_dir` the masks are written as PGMs and referenced by path;
    otherwise they are attached in memory.
    """
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    for sample in manifest:
        gt = (
            sample.load_gt()
            if binarize_threshold is None
            else sample.load_gt(binarize_threshold)
        )
        per_sample = replace(params, seed=sample_seed(params.seed, sample.id))
        coarse = degrade_mask(gt, per_sample)
        if out_dir is not None:
            path = out_dir / f"{sample.id}.pgm"
            write_mask(path, coarse)
            samples.append(replace(sample, coarse_path=path, coarse_data=None))
        else:
            samples.append(replace(sample, coarse_data=coarse))
    return DatasetManifest(
        root=manifest.root,
        samples=samples,
        split_name=manifest.split_name,
        warnings=list(manifest.warnings),
    )


def ingest_external_masks(
    manifest: DatasetManifest, coarse_dir, strict: bool = True
) -> DatasetManifest:
    """Attach externally computed coarse masks (`<id>.pgm`) to a manifest.

    In strict mode a missing file raises IngestionError naming the id; with
    strict=False the sample is flagged to fall back to the degrader.
    """
    coarse_dir = Path(coarse_dir)
    samples = []
    warnings = list(manifest.warnings)
    for sample in manifest:
        path = coarse_dir / f"{sample.id}.pgm"
        if path.is_file():
            samples.append(replace(sample, coarse_path=path))
        elif strict:
            raise IngestionError(f"no coarse mask for sample {sample.id} in {coarse_dir}")
        else:
            warnings.append(f"sample {sample.id}: coarse mask missing, degrader fallback")
            samples.append(replace(sample, coarse_path=None))
    return DatasetManifest(
        root=manifest.root, samples=samples, split_name=manifest.split_name, warnings=warnings
    )


class CoarseDegrader(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper around degrade_mask for single masks or lists.

    Stateless: `fit` is a no-op. For a list input, the per-element seed is
    derived from (seed, index) so results do not depend on list length.
    """

    def __init__(
        self,
        seed: int = 0,
        dilate_erode_radius: int = 1,
        boundary_blur_sigma: float = 1.0,
        threshold: float = 0.5,
        drop_component_prob: float = 0.0,
        spurious_blob_prob: float = 0.0,
    ):
        self.seed = seed
        self.dilate_erode_radius = dilate_erode_radius
        self.boundary_blur_sigma = boundary_blur_sigma
        self.threshold = threshold
        self.drop_component_prob = drop_component_prob
        self.spurious_blob_prob = spurious_blob_prob

    def _params(self, seed: int) -> DegradeParams:
        return DegradeParams(
            seed=seed,
            dilate_erode_radius=self.dilate_erode_radius,
            boundary_blur_sigma=self.boundary_blur_sigma,
            threshold=self.threshold,
            drop_component_prob=self.drop_component_prob,
            spurious_blob_prob=self.spurious_blob_prob,
        )

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return degrade_mask(X, self._params(self.seed))
        return [
            degrade_mask(mask, self._params(sample_seed(self.seed, str(i))))
            for i, mask in enumerate(X)
        ]
