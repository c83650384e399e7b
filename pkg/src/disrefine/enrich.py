"""Ground-truth enrichment: split multi-object masks into per-object pairs.

A GT mask with N disjoint foreground objects becomes N image-GT pairs, one
per connected component, each with a tight prompt box derived from its
component. Enrichment grows a training set and adapts it to box prompting.
"""
from __future__ import annotations

from collections import deque
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import PromptBox
from .dataio import DatasetManifest, Sample, load_dataset, write_mask
from .errors import EmptyMaskError
from .netpbm import write_ppm, to_uint8
from .validation import check_binary_mask

_OFFSETS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_OFFSETS_8 = _OFFSETS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def connected_components(mask, connectivity: int = 8) -> list[np.ndarray]:
    """Split a binary mask into one full-extent mask per foreground component.

    Components are ordered by their smallest (row, col) pixel. An empty mask
    yields an empty list.
    """
    arr = check_binary_mask(mask)
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    offsets = _OFFSETS_4 if connectivity == 4 else _OFFSETS_8
    h, w = arr.shape
    fg = arr > 0
    labels = np.zeros((h, w), dtype=np.int32)
    components: list[np.ndarray] = []
    next_label = 0
    for r in range(h):
        for c in range(w):
            if not fg[r, c] or labels[r, c]:
                continue
            next_label += 1
            comp = np.zeros((h, w), dtype=np.float64)
            queue = deque([(r, c)])
            labels[r, c] = next_label
            comp[r, c] = 1.0
            while queue:
                cr, cc = queue.popleft()
                for dr, dc in offsets:
                    nr, nc = cr + dr, cc + dc
                    if 0 <= nr < h and 0 <= nc < w and fg[nr, nc] and not labels[nr, nc]:
                        labels[nr, nc] = next_label
                        comp[nr, nc] = 1.0
                        queue.append((nr, nc))
            components.append(comp)
    return components


def derive_prompt_box(mask) -> PromptBox:
    """Tight axis-aligned bounding box of the foreground pixels."""
    arr = check_binary_mask(mask)
    rows = np.any(arr > 0, axis=1)
    cols = np.any(arr > 0, axis=0)
    if not rows.any():
        raise EmptyMaskError("cannot derive a prompt box from an empty mask")
    y_idx = np.flatnonzero(rows)
    x_idx = np.flatnonzero(cols)
    return PromptBox(int(x_idx[0]), int(y_idx[0]), int(x_idx[-1]), int(y_idx[-1]))


def enrich_ground_truth(
    sample: Sample,
    min_area: int = 10,
    connectivity: int = 8,
    binarize_threshold: float | None = None,
) -> list[Sample]:
    """Expand one sample into per-component samples with ids `<id>#<n>`.

    Every output shares the input's image path, carries its component mask in
    memory, and gets a tight prompt box for it. Components below `min_area`
    are dropped; an entirely empty GT yields an empty list.
    """
    gt = sample.load_gt() if binarize_threshold is None else sample.load_gt(binarize_threshold)
    components = connected_components(gt, connectivity)
    out: list[Sample] = []
    n = 0
    for comp in components:
        if comp.sum() < min_area:
            continue
        n += 1
        out.append(
            replace(
                sample,
                id=f"{sample.id}#{n}",
                gt_path=None,
                gt_data=comp,
                box=derive_prompt_box(comp),
            )
        )
    return out


def enrich_manifest(
    manifest: DatasetManifest, min_area: int = 10, connectivity: int = 8
) -> DatasetManifest:
    """Enrich every sample of a manifest; warnings record drops and empties."""
    samples: list[Sample] = []
    warnings = list(manifest.warnings)
    for sample in manifest:
        gt = sample.load_gt()
        comps = connected_components(gt, connectivity)
        enriched = enrich_ground_truth(sample, min_area=min_area, connectivity=connectivity)
        dropped = len(comps) - len(enriched)
        if not comps:
            warnings.append(f"sample {sample.id}: empty ground truth, no pairs emitted")
        elif dropped:
            warnings.append(f"sample {sample.id}: dropped {dropped} component(s) below {min_area}px")
        samples.extend(enriched)
    return DatasetManifest(
        root=manifest.root,
        samples=samples,
        split_name=manifest.split_name or "enriched",
        warnings=warnings,
    )


def write_enriched_root(manifest: DatasetManifest, out_root) -> DatasetManifest:
    """Materialize an enriched manifest as a standalone dataset root.

    Per-component GT masks are written under gt/, the (possibly shared)
    source images are copied per enriched id, and prompts.jsonl is
    regenerated from the derived boxes.
    """
    import json

    out_root = Path(out_root)
    (out_root / "im").mkdir(parents=True, exist_ok=True)
    (out_root / "gt").mkdir(parents=True, exist_ok=True)
    prompt_lines = []
    for sample in manifest:
        write_mask(out_root / "gt" / f"{sample.id}.pgm", sample.load_gt())
        write_ppm(out_root / "im" / f"{sample.id}.ppm", to_uint8(sample.load_image()))
        if sample.box is not None:
            prompt_lines.append(json.dumps({"id": sample.id, "box": list(sample.box.as_tuple())}))
    (out_root / "prompts.jsonl").write_text("\n".join(prompt_lines) + ("\n" if prompt_lines else ""))
    loaded = load_dataset(out_root)
    loaded.warnings.extend(manifest.warnings)
    return loaded
