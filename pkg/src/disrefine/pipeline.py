"""Configuration handling, batch inference, and the ablation harness."""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .coarse import DegradeParams, degrade_manifest
from .core import LossWeights, MetricConfig
from .dataio import DatasetManifest, MetricReport, load_dataset, write_mask, write_report
from .enrich import derive_prompt_box, enrich_manifest
from .errors import ConfigurationError
from .metrics import evaluate_dataset
from .netpbm import read_pgm
from .refiner import (
    RefinerParams,
    TrainConfig,
    refine,
    save_params,
    train_gt_encoder,
    train_refiner,
)

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "synth": {"count": 250, "size": 64},
    "enrich": {"min_area": 10, "connectivity": 8},
    "degrade": {
        "dilate_erode_radius": 2,
        "boundary_blur_sigma": 1.2,
        "threshold": 0.5,
        "drop_component_prob": 0.15,
        "spurious_blob_prob": 0.25,
    },
    "train": {
        "levels": 3,
        "base_channels": 8,
        "iterations": 2000,
        "batch_size": 6,
        "learning_rate": 1e-3,
        "hflip_augment": True,
        "ortho_enabled": True,
        "lambda1": 20.0,
        "lambda2": 0.5,
        "lambda3": 1.0,
        "lambda4": 1e-6,
        "use_box_channel": True,
        "use_mask_channel": True,
        "gt_encoder_iterations": 300,
    },
    "metrics": {
        "beta_squared": 0.3,
        "threshold_count": 255,
        "hce_gamma": 5,
        "binarize_threshold": 128.0 / 255.0,
    },
    "ablate": {"iterations": 600, "test_fraction": 0.2},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    """Merge a JSON config file over the documented defaults."""
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    user = json.loads(Path(path).read_text())
    return _deep_merge(DEFAULT_CONFIG, user)


def degrade_params_from_config(cfg: dict, seed: int | None = None) -> DegradeParams:
    d = cfg["degrade"]
    return DegradeParams(
        seed=cfg["seed"] if seed is None else seed,
        dilate_erode_radius=int(d["dilate_erode_radius"]),
        boundary_blur_sigma=float(d["boundary_blur_sigma"]),
        threshold=float(d["threshold"]),
        drop_component_prob=float(d["drop_component_prob"]),
        spurious_blob_prob=float(d["spurious_blob_prob"]),
    )


def train_config_from_config(cfg: dict, seed: int | None = None, **overrides) -> TrainConfig:
    t = dict(cfg["train"])
    t.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(
        iterations=int(t["iterations"]),
        batch_size=int(t["batch_size"]),
        learning_rate=float(t["learning_rate"]),
        seed=cfg["seed"] if seed is None else seed,
        loss_weights=LossWeights(
            float(t["lambda1"]), float(t["lambda2"]), float(t["lambda3"]), float(t["lambda4"])
        ),
        hflip_augment=bool(t["hflip_augment"]),
        ortho_enabled=bool(t["ortho_enabled"]),
        levels=int(t["levels"]),
        base_channels=int(t["base_channels"]),
        use_box_channel=bool(t["use_box_channel"]),
        use_mask_channel=bool(t["use_mask_channel"]),
        degrade_fallback=t.get("degrade_fallback"),
    )


def metric_config_from_config(cfg: dict) -> MetricConfig:
    m = cfg["metrics"]
    return MetricConfig(
        beta_squared=float(m["beta_squared"]),
        threshold_count=int(m["threshold_count"]),
        hce_gamma=int(m["hce_gamma"]),
        binarize_threshold=float(m["binarize_threshold"]),
    )


def quantize_mask(mask: np.ndarray) -> np.ndarray:
    """Snap probabilities to the 8-bit grid used by mask files."""
    return np.round(np.clip(mask, 0.0, 1.0) * 255.0) / 255.0


def predict_manifest(
    manifest: DatasetManifest,
    params: RefinerParams,
    out_dir=None,
    degrade_fallback: DegradeParams | None = None,
) -> dict[str, np.ndarray]:
    """Refine every sample; predictions are quantized to the 8-bit file grid.

    Quantizing in memory keeps written PGMs and returned arrays identical, so
    re-running evaluation from stored predictions reproduces reports exactly.
    """
    from .coarse import degrade_mask, sample_seed

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    predictions: dict[str, np.ndarray] = {}
    for sample in manifest:
        image = sample.load_image()
        coarse = sample.load_coarse()
        if coarse is None:
            if degrade_fallback is None:
                raise ConfigurationError(f"sample {sample.id} has no coarse mask")
            per = replace(degrade_fallback, seed=sample_seed(degrade_fallback.seed, sample.id))
            coarse = degrade_mask(sample.load_gt(), per)
        box = sample.box if sample.box is not None else derive_prompt_box(sample.load_gt())
        pred = quantize_mask(refine(image, coarse, box, params))
        predictions[sample.id] = pred
        if out_dir is not None:
            write_mask(out_dir / f"{sample.id}.pgm", pred)
    return predictions


def load_predictions(pred_dir, manifest: DatasetManifest) -> dict[str, np.ndarray]:
    pred_dir = Path(pred_dir)
    predictions = {}
    for sample in manifest:
        path = pred_dir / f"{sample.id}.pgm"
        if path.is_file():
            predictions[sample.id] = read_pgm(path).astype(np.float64) / 255.0
    return predictions


def split_manifest(manifest: DatasetManifest, test_fraction: float) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic train/test split: the lexicographic tail becomes test."""
    ids = manifest.ids()
    n_test = max(1, int(round(len(ids) * test_fraction)))
    return (
        manifest.subset(ids[:-n_test], "train"),
        manifest.subset(ids[-n_test:], "test"),
    )


# ---------------------------------------------------------------------------
# Ablation harness
# ---------------------------------------------------------------------------

# (row name, enrichment, box channel, mask channel); the first row is the
# prompt-free configuration where both extra channels are all-zeros planes.
ABLATION_ROWS = (
    ("neither", False, False, False),
    ("box_only", False, True, False),
    ("mask_only", False, False, True),
    ("box_mask", False, True, True),
    ("box_mask_enrich", True, True, True),
)

ABLATION_CSV_HEADER = "row,enrich,box,mask,fmax,fw,mae,s,e,hce"


def run_ablation(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    config: TrainConfig,
    degrade: DegradeParams,
    out_dir=None,
    metric_cfg: MetricConfig = MetricConfig(),
    min_area: int = 10,
    gt_encoder_iterations: int = 300,
) -> list[dict]:
    """Train and evaluate the five input-channel/enrichment configurations.

    All rows are scored on the same enriched test split (per-object GT, tight
    boxes, degraded coarse masks). Ablated channels are zeroed both during
    training and at inference. Artifacts per row (params, predictions,
    report) allow the summary table to be regenerated from disk.
    """
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    train_plain = degrade_manifest(train_manifest, degrade)
    train_rich = degrade_manifest(enrich_manifest(train_manifest, min_area=min_area), degrade)
    test_rich = degrade_manifest(enrich_manifest(test_manifest, min_area=min_area), degrade)

    enc_cfg = replace(config, iterations=gt_encoder_iterations)
    encoders = {
        False: train_gt_encoder(train_plain, enc_cfg)[0],
        True: train_gt_encoder(train_rich, enc_cfg)[0],
    }

    rows: list[dict] = []
    for name, enrich, use_box, use_mask in ABLATION_ROWS:
        cfg = replace(config, use_box_channel=use_box, use_mask_channel=use_mask)
        params, _ = train_refiner(train_rich if enrich else train_plain, encoders[enrich], cfg)
        row_dir = out_dir / name if out_dir is not None else None
        preds = predict_manifest(
            test_rich, params, out_dir=row_dir / "pred" if row_dir else None
        )
        report = evaluate_dataset(preds, test_rich, metric_cfg)
        if row_dir is not None:
            save_params(params, row_dir / "params.bin")
            write_report(report, row_dir / "report.csv", "csv")
            write_report(report, row_dir / "report.json", "json")
        rows.append(
            {
                "row": name,
                "enrich": enrich,
                "box": use_box,
                "mask": use_mask,
                "fmax": report.aggregate["fmax"],
                "fw": report.aggregate["fw"],
                "mae": report.aggregate["mae"],
                "s": report.aggregate["s"],
                "e": report.aggregate["e"],
                "hce": report.aggregate["hce_mean"],
                "params": params,  # in-memory only; not part of the CSV
            }
        )
    if out_dir is not None:
        write_ablation_csv(rows, out_dir / "ablation.csv")
    return rows


def write_ablation_csv(rows: list[dict], path) -> None:
    lines = [ABLATION_CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r['row']},{int(r['enrich'])},{int(r['box'])},{int(r['mask'])},"
            f"{r['fmax']:.6f},{r['fw']:.6f},{r['mae']:.6f},{r['s']:.6f},{r['e']:.6f},{r['hce']:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def evaluate_from_files(root, pred_dir, metric_cfg: MetricConfig) -> tuple[MetricReport, int]:
    """Evaluate stored predictions against a dataset root.

    Returns (report, n_evaluated); samples without a stored prediction raise.
    """
    manifest = load_dataset(root)
    predictions = load_predictions(pred_dir, manifest)
    report = evaluate_dataset(predictions, manifest, metric_cfg)
    return report, len(manifest)
