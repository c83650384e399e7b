"""Estimator-style wrappers so the pipeline composes with sklearn tooling.

Hyperparameters live in __init__ (get_params/set_params work as usual);
fitted state lands in trailing-underscore attributes.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .coarse import DegradeParams
from .core import LossWeights, PromptBox
from .dataio import DatasetManifest, Sample
from .refiner import (
    GtEncoderParams,
    RefinerParams,
    TrainConfig,
    load_params,
    refine,
    save_params,
    train_gt_encoder,
    train_refiner,
)


def _as_manifest(x) -> DatasetManifest:
    if isinstance(x, DatasetManifest):
        return x
    if isinstance(x, (list, tuple)):
        if all(isinstance(s, Sample) for s in x):
            return DatasetManifest(root=None, samples=list(x))
        # bare masks: wrap as GT-only in-memory samples
        samples = [
            Sample(id=f"m{i:05d}", gt_data=np.asarray(m, dtype=np.float64)) for i, m in enumerate(x)
        ]
        return DatasetManifest(root=None, samples=samples)
    raise TypeError(f"cannot interpret {type(x).__name__} as a dataset")


class GroundTruthEncoder(BaseEstimator):
    """Self-encoding mask encoder whose frozen features supervise the refiner."""

    def __init__(
        self,
        levels: int = 3,
        base_channels: int = 8,
        iterations: int = 300,
        batch_size: int = 6,
        learning_rate: float = 1e-3,
        seed: int = 0,
        hflip_augment: bool = True,
    ):
        self.levels = levels
        self.base_channels = base_channels
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.hflip_augment = hflip_augment

    def _config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            hflip_augment=self.hflip_augment,
            levels=self.levels,
            base_channels=self.base_channels,
        )

    def fit(self, X, y=None):
        """X: DatasetManifest, list of Samples, or list of (H, W) masks."""
        manifest = _as_manifest(X)
        self.params_, self.history_ = train_gt_encoder(manifest, self._config())
        return self

    def save(self, path) -> None:
        save_params(self.params_, path)


class MaskRefiner(BaseEstimator):
    """Trainable coarse-to-fine mask refiner with a promptable box input."""

    def __init__(
        self,
        levels: int = 3,
        base_channels: int = 8,
        iterations: int = 2000,
        batch_size: int = 6,
        learning_rate: float = 1e-3,
        seed: int = 0,
        lambda1: float = 20.0,
        lambda2: float = 0.5,
        lambda3: float = 1.0,
        lambda4: float = 1e-6,
        hflip_augment: bool = True,
        ortho_enabled: bool = True,
        use_box_channel: bool = True,
        use_mask_channel: bool = True,
        gt_encoder: GroundTruthEncoder | GtEncoderParams | None = None,
        gt_encoder_iterations: int = 300,
        degrade_fallback: DegradeParams | None = None,
    ):
        self.levels = levels
        self.base_channels = base_channels
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.lambda4 = lambda4
        self.hflip_augment = hflip_augment
        self.ortho_enabled = ortho_enabled
        self.use_box_channel = use_box_channel
        self.use_mask_channel = use_mask_channel
        self.gt_encoder = gt_encoder
        self.gt_encoder_iterations = gt_encoder_iterations
        self.degrade_fallback = degrade_fallback

    def _config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            loss_weights=LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4),
            hflip_augment=self.hflip_augment,
            ortho_enabled=self.ortho_enabled,
            levels=self.levels,
            base_channels=self.base_channels,
            use_box_channel=self.use_box_channel,
            use_mask_channel=self.use_mask_channel,
            degrade_fallback=self.degrade_fallback,
        )

    def _resolve_gt_encoder(self, manifest: DatasetManifest) -> GtEncoderParams:
        if isinstance(self.gt_encoder, GtEncoderParams):
            return self.gt_encoder
        if isinstance(self.gt_encoder, GroundTruthEncoder):
            if not hasattr(self.gt_encoder, "params_"):
                raise ValueError("gt_encoder estimator is not fitted")
            return self.gt_encoder.params_
        enc_cfg = TrainConfig(
            iterations=self.gt_encoder_iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            hflip_augment=self.hflip_augment,
            levels=self.levels,
            base_channels=self.base_channels,
        )
        params, _ = train_gt_encoder(manifest, enc_cfg)
        return params

    def fit(self, X, y=None):
        """X: DatasetManifest or list of Samples with GT + coarse + box inputs."""
        manifest = _as_manifest(X)
        self.gt_encoder_ = self._resolve_gt_encoder(manifest)
        self.params_, self.history_ = train_refiner(manifest, self.gt_encoder_, self._config())
        return self

    def predict(self, image, coarse, box: PromptBox) -> np.ndarray:
        """Refined probability mask for one (image, coarse, box) triple."""
        if not hasattr(self, "params_"):
            raise ValueError("MaskRefiner is not fitted")
        return refine(image, coarse, box, self.params_)

    def save(self, path) -> None:
        save_params(self.params_, path)

    @classmethod
    def from_params(cls, params: RefinerParams) -> "MaskRefiner":
        est = cls(
            levels=params.topology.levels,
            base_channels=params.topology.base_channels,
            seed=params.seed,
            use_box_channel=params.use_box_channel,
            use_mask_channel=params.use_mask_channel,
        )
        est.params_ = params
        return est

    @classmethod
    def load(cls, path) -> "MaskRefiner":
        params = load_params(path)
        if not isinstance(params, RefinerParams):
            raise ValueError(f"{path} does not contain refiner parameters")
        return cls.from_params(params)
