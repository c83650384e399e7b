import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from disrefine.coarse import DegradeParams, degrade_manifest
from disrefine.dataio import generate_synthetic_dataset
from disrefine.enrich import enrich_manifest
from disrefine.refiner import TrainConfig, train_gt_encoder, train_refiner


def random_prob_mask(rng, h=8, w=8):
    return rng.random((h, w))


def random_binary_mask(rng, h=8, w=8, p=0.45):
    return (rng.random((h, w)) < p).astype(np.float64)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A small end-to-end training run shared by slower tests.

    32x32 synthetic data, enriched, degraded coarse masks, a 2-level refiner
    trained briefly: enough signal for smoke checks without real training cost.
    """
    root = tmp_path_factory.mktemp("tiny") / "data"
    manifest = generate_synthetic_dataset(root, seed=11, count=24, size=32)
    degrade = DegradeParams(seed=5, dilate_erode_radius=2, boundary_blur_sigma=1.0,
                            drop_component_prob=0.1, spurious_blob_prob=0.2)
    enriched = degrade_manifest(enrich_manifest(manifest, min_area=8), degrade)
    cfg = TrainConfig(iterations=150, batch_size=4, learning_rate=2e-3, seed=3,
                      levels=2, base_channels=6)
    gt_cfg = TrainConfig(iterations=80, batch_size=4, learning_rate=2e-3, seed=3,
                         levels=2, base_channels=6)
    gt_encoder, _ = train_gt_encoder(enriched, gt_cfg)
    params, history = train_refiner(enriched, gt_encoder, cfg)
    return {
        "root": root,
        "manifest": manifest,
        "enriched": enriched,
        "degrade": degrade,
        "gt_encoder": gt_encoder,
        "params": params,
        "history": history,
        "config": cfg,
    }
