"""Two-stage promptable mask refinement at desk scale.

Stage 1 produces a coarse mask (a seeded degrader of the ground truth, or
externally supplied files); stage 2 refines it with a small encoder-decoder
network conditioned on the image, the coarse mask, and a rasterized prompt
box. Ships with GT enrichment, a six-metric evaluator, a CLI, and an HTTP
serving mode for interactive use.
"""

from .coarse import CoarseDegrader, DegradeParams, degrade_mask, ingest_external_masks
from .core import (
    LossWeights,
    MetricConfig,
    PromptBox,
    compose_five_channel,
    rasterize_prompt_box,
)
from .dataio import (
    DatasetManifest,
    MetricReport,
    Sample,
    generate_synthetic_dataset,
    load_dataset,
    read_report,
    write_report,
)
from .enrich import (
    connected_components,
    derive_prompt_box,
    enrich_ground_truth,
    enrich_manifest,
)
from .errors import (
    ConfigurationError,
    DisRefineError,
    EmptyMaskError,
    IngestionError,
    InvalidBoxError,
    LayoutError,
    NumericError,
    ShapeError,
)
from .estimators import GroundTruthEncoder, MaskRefiner
from .losses import bce_loss, iou_loss, mse_feature_loss, ortho_loss, total_loss
from .metrics import (
    e_measure,
    evaluate_dataset,
    f_measure_curve,
    hce,
    mae,
    s_measure,
    weighted_f_measure,
)
from .refiner import (
    GtEncoderParams,
    RefinerParams,
    TrainConfig,
    TrainHistory,
    check_gradients,
    load_params,
    refine,
    refiner_forward,
    save_params,
    train_gt_encoder,
    train_refiner,
)

__version__ = "0.1.0"

__all__ = [
    "CoarseDegrader",
    "ConfigurationError",
    "DatasetManifest",
    "DegradeParams",
    "DisRefineError",
    "EmptyMaskError",
    "GroundTruthEncoder",
    "GtEncoderParams",
    "IngestionError",
    "InvalidBoxError",
    "LayoutError",
    "LossWeights",
    "MaskRefiner",
    "MetricConfig",
    "MetricReport",
    "NumericError",
    "PromptBox",
    "RefinerParams",
    "Sample",
    "ShapeError",
    "TrainConfig",
    "TrainHistory",
    "bce_loss",
    "check_gradients",
    "compose_five_channel",
    "connected_components",
    "degrade_mask",
    "derive_prompt_box",
    "e_measure",
    "enrich_ground_truth",
    "enrich_manifest",
    "evaluate_dataset",
    "f_measure_curve",
    "generate_synthetic_dataset",
    "hce",
    "ingest_external_masks",
    "iou_loss",
    "load_dataset",
    "load_params",
    "mae",
    "mse_feature_loss",
    "ortho_loss",
    "rasterize_prompt_box",
    "read_report",
    "refine",
    "refiner_forward",
    "s_measure",
    "save_params",
    "total_loss",
    "train_gt_encoder",
    "train_refiner",
    "weighted_f_measure",
    "write_report",
]
