"""Dataset layout, raster file I/O, synthetic data generation, report emission.

On-disk dataset convention:
    <root>/im/<id>.ppm        RGB image (P6); .pgm accepted and expanded to RGB
    <root>/gt/<id>.pgm        ground-truth mask (P5)
    <root>/coarse/<id>.pgm    optional coarse masks (P5), intensity/255 = prob
    <root>/prompts.jsonl      optional lines {"id": "<id>", "box": [x0,y0,x1,y1]}
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import MetricConfig, PromptBox
from .errors import LayoutError
from .netpbm import read_pgm, read_ppm, to_uint8, write_pgm, write_ppm

METRIC_KEYS = ("fmax", "fw", "mae", "s", "e", "hce")
CSV_HEADER = "id,fmax,fw,mae,s,e,hce"

# Per-sample metric approximations worth flagging in every emitted report.
REPORT_NOTES = {
    "hce": "hce is a dominant-boundary-point approximation (erosion-relaxed "
    "error regions, Douglas-Peucker epsilon=2px), not the original "
    "reference implementation"
}


@dataclass
class Sample:
    """One dataset entry; arrays may be attached in memory instead of files."""

    id: str
    image_path: Path | None = None
    gt_path: Path | None = None
    coarse_path: Path | None = None
    box: PromptBox | None = None
    image_data: np.ndarray | None = None
    gt_data: np.ndarray | None = None
    coarse_data: np.ndarray | None = None

    def load_image(self) -> np.ndarray:
        """Return the (H, W, 3) float64 image in [0, 1]; grayscale is expanded."""
        if self.image_data is not None:
            return np.asarray(self.image_data, dtype=np.float64)
        if self.image_path is None:
            raise LayoutError(f"sample {self.id} has no image")
        path = Path(self.image_path)
        if path.suffix == ".pgm":
            gray = read_pgm(path).astype(np.float64) / 255.0
            return np.repeat(gray[:, :, None], 3, axis=2)
        return read_ppm(path).astype(np.float64) / 255.0

    def load_gt_raw(self) -> np.ndarray:
        """Return the GT mask as raw probabilities without binarization."""
        if self.gt_data is not None:
            return np.asarray(self.gt_data, dtype=np.float64)
        if self.gt_path is None:
            raise LayoutError(f"sample {self.id} has no ground truth")
        return read_pgm(self.gt_path).astype(np.float64) / 255.0

    def load_gt(self, binarize_threshold: float = MetricConfig().binarize_threshold) -> np.ndarray:
        """Return the GT as a 0/1 mask, binarizing grayscale annotations."""
        raw = self.load_gt_raw()
        return (raw >= binarize_threshold).astype(np.float64)

    def load_coarse(self) -> np.ndarray | None:
        if self.coarse_data is not None:
            return np.asarray(self.coarse_data, dtype=np.float64)
        if self.coarse_path is None:
            return None
        return read_pgm(self.coarse_path).astype(np.float64) / 255.0


@dataclass
class DatasetManifest:
    """Ordered collection of samples; order is lexicographic by id."""

    root: Path | None
    samples: list[Sample]
    split_name: str = ""
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.samples = sorted(self.samples, key=lambda s: s.id)
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise LayoutError("duplicate ids in manifest")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def get(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def subset(self, ids, split_name: str = "") -> "DatasetManifest":
        wanted = set(ids)
        return DatasetManifest(
            root=self.root,
            samples=[s for s in self.samples if s.id in wanted],
            split_name=split_name or self.split_name,
        )


def load_dataset(root, split_name: str = "") -> DatasetManifest:
    """Scan a dataset root into a manifest.

    Images without a GT counterpart (and vice versa) are skipped with a
    warning recorded on the manifest; missing im/ or gt/ directories raise.
    """
    root = Path(root)
    im_dir, gt_dir = root / "im", root / "gt"
    if not im_dir.is_dir():
        raise LayoutError(f"{root} is missing an im/ directory")
    if not gt_dir.is_dir():
        raise LayoutError(f"{root} is missing a gt/ directory")

    images = {p.stem: p for p in sorted(im_dir.iterdir()) if p.suffix in (".ppm", ".pgm")}
    gts = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.suffix == ".pgm"}
    coarse_dir = root / "coarse"
    coarse = (
        {p.stem: p for p in sorted(coarse_dir.iterdir()) if p.suffix == ".pgm"}
        if coarse_dir.is_dir()
        else {}
    )

    boxes: dict[str, PromptBox] = {}
    prompts_path = root / "prompts.jsonl"
    if prompts_path.is_file():
        for line in prompts_path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            x0, y0, x1, y1 = rec["box"]
            boxes[rec["id"]] = PromptBox(x0, y0, x1, y1)

    warnings = []
    samples = []
    for sid in sorted(set(images) | set(gts)):
        if sid not in gts:
            warnings.append(f"image {sid} has no gt counterpart; skipped")
            continue
        if sid not in images:
            warnings.append(f"gt {sid} has no image counterpart; skipped")
            continue
        samples.append(
            Sample(
                id=sid,
                image_path=images[sid],
                gt_path=gts[sid],
                coarse_path=coarse.get(sid),
                box=boxes.get(sid),
            )
        )
    return DatasetManifest(root=root, samples=samples, split_name=split_name, warnings=warnings)


# ---------------------------------------------------------------------------
# Synthetic shape dataset
# ---------------------------------------------------------------------------


def _ellipse(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = rng.uniform(0.15 * size, 0.85 * size, 2)
    a = rng.uniform(0.05 * size, 0.16 * size)
    b = rng.uniform(0.05 * size, 0.16 * size)
    theta = rng.uniform(0.0, math.pi)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return ((u / max(a, 1.0)) ** 2 + (v / max(b, 1.0)) ** 2 <= 1.0).astype(np.float64)


def _rotated_rect(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = rng.uniform(0.15 * size, 0.85 * size, 2)
    w = rng.uniform(0.08 * size, 0.26 * size)
    h = rng.uniform(0.08 * size, 0.26 * size)
    theta = rng.uniform(0.0, math.pi)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return ((np.abs(u) <= w / 2) & (np.abs(v) <= h / 2)).astype(np.float64)


def _polyline(rng, size: int) -> np.ndarray:
    """A 1-2 pixel wide open polyline, emulating thin structures."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    npts = int(rng.integers(3, 7))
    pts = rng.uniform(0.1 * size, 0.9 * size, (npts, 2))
    half_width = float(rng.choice([0.6, 1.1]))
    mask = np.zeros((size, size), dtype=bool)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        vx, vy = x1 - x0, y1 - y0
        norm2 = vx * vx + vy * vy
        if norm2 < 1e-12:
            continue
        t = np.clip(((xx - x0) * vx + (yy - y0) * vy) / norm2, 0.0, 1.0)
        d2 = (xx - (x0 + t * vx)) ** 2 + (yy - (y0 + t * vy)) ** 2
        mask |= d2 <= half_width**2
    return mask.astype(np.float64)


_SHAPE_FNS = (_ellipse, _rotated_rect, _polyline)


def _render_sample(rng, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Render one (gt, image) pair; the GT always has >= 1 foreground pixel."""
    gt = np.zeros((size, size), dtype=np.float64)
    for _ in range(10):
        gt = np.zeros((size, size), dtype=np.float64)
        n_shapes = int(rng.integers(1, 5))
        for _ in range(n_shapes):
            fn = _SHAPE_FNS[int(rng.integers(0, len(_SHAPE_FNS)))]
            gt = np.maximum(gt, fn(rng, size))
        if gt.sum() >= 1:
            break
    if gt.sum() < 1:
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        gt = (((xx - size / 2) ** 2 + (yy - size / 2) ** 2) <= (size / 6) ** 2).astype(np.float64)

    bg = rng.uniform(0.05, 0.95, 3)
    fg = rng.uniform(0.05, 0.95, 3)
    for _ in range(20):
        if np.mean(np.abs(fg - bg)) >= 0.25:
            break
        fg = rng.uniform(0.05, 0.95, 3)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    gx, gy = rng.uniform(-0.15, 0.15, 2)
    ramp = gx * (xx / size) + gy * (yy / size)
    noise = rng.normal(0.0, 0.05, (size, size, 3))
    image = bg[None, None, :] + gt[:, :, None] * (fg - bg)[None, None, :]
    image = np.clip(image + ramp[:, :, None] + noise, 0.0, 1.0)
    return gt, image


def generate_synthetic_dataset(root, seed: int, count: int, size: int) -> DatasetManifest:
    """Write `count` synthetic image/GT pairs of `size`x`size` under `root`.

    Each GT is a union of 1-4 random shapes (ellipses, rotated rectangles,
    thin polylines); the image renders it with per-sample colors, a smooth
    intensity ramp and Gaussian noise (sigma 0.05). Byte-identical output for
    identical (seed, count, size).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if size < 16:
        raise ValueError("size must be >= 16")
    root = Path(root)
    (root / "im").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    streams = np.random.SeedSequence(seed).spawn(count)
    for i in range(count):
        rng = np.random.default_rng(streams[i])
        gt, image = _render_sample(rng, size)
        sid = f"s{i:04d}"
        write_pgm(root / "gt" / f"{sid}.pgm", to_uint8(gt))
        write_ppm(root / "im" / f"{sid}.ppm", to_uint8(image))
    return load_dataset(root)


# ---------------------------------------------------------------------------
# Metric reports
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-sample and aggregate values of the six evaluation metrics.

    `per_sample` maps id -> {fmax, fw, mae, s, e, hce}; undefined entries
    (empty-GT F-measures) are None and excluded from the aggregate means.
    """

    per_sample: dict[str, dict[str, float | None]]
    aggregate: dict[str, float]
    warnings: list[str] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=lambda: dict(REPORT_NOTES))

    @classmethod
    def from_per_sample(cls, per_sample, warnings=None) -> "MetricReport":
        return cls(
            per_sample=dict(per_sample),
            aggregate=compute_aggregate(per_sample),
            warnings=list(warnings or []),
        )


def compute_aggregate(per_sample: dict[str, dict[str, float | None]]) -> dict[str, float]:
    """Aggregate means for each metric (HCE also summed); Nones excluded."""
    agg: dict[str, float] = {}
    for key in METRIC_KEYS:
        values = [rec[key] for rec in per_sample.values() if rec.get(key) is not None]
        name = "hce_mean" if key == "hce" else key
        agg[name] = float(np.mean(values)) if values else float("nan")
    hce_values = [rec["hce"] for rec in per_sample.values() if rec.get("hce") is not None]
    agg["hce_sum"] = float(np.sum(hce_values)) if hce_values else 0.0
    return agg


def _csv_cell(key: str, value) -> str:
    if value is None:
        return "nan"
    if key == "hce" and float(value) == int(value):
        return str(int(value))
    return f"{float(value):.6f}"


def write_report(report: MetricReport, path, fmt: str = "csv") -> None:
    """Emit a report as CSV (columns id,fmax,fw,mae,s,e,hce) or JSON.

    The CSV appends a `__mean__` row and a `__sum__` row (HCE total); floats
    are printed with 6 decimals. JSON keeps full precision so that a written
    report parses back equal to the in-memory one.
    """
    path = Path(path)
    if fmt == "csv":
        lines = [CSV_HEADER]
        for sid in sorted(report.per_sample):
            rec = report.per_sample[sid]
            lines.append(sid + "," + ",".join(_csv_cell(k, rec[k]) for k in METRIC_KEYS))
        if report.per_sample:
            agg = report.aggregate
            mean_cells = [f"{agg[k if k != 'hce' else 'hce_mean']:.6f}" for k in METRIC_KEYS]
            lines.append("__mean__," + ",".join(mean_cells))
            lines.append("__sum__,,,,,," + str(int(agg["hce_sum"])))
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "json":
        payload = {
            "per_sample": report.per_sample,
            "aggregate": report.aggregate,
            "warnings": report.warnings,
            "metadata": report.metadata,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_report(path) -> MetricReport:
    """Parse a JSON report written by write_report."""
    payload = json.loads(Path(path).read_text())
    return MetricReport(
        per_sample=payload["per_sample"],
        aggregate=payload["aggregate"],
        warnings=payload.get("warnings", []),
        metadata=payload.get("metadata", {}),
    )


def write_mask(path, mask: np.ndarray) -> None:
    """Persist a [0,1] mask as an 8-bit PGM."""
    write_pgm(path, to_uint8(np.asarray(mask, dtype=np.float64)))


def with_coarse_data(sample: Sample, coarse: np.ndarray) -> Sample:
    return replace(sample, coarse_data=coarse)
