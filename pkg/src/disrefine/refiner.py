"""Stage-2 refinement network: encoder-decoder over the five-channel input.

Desk-scale topology, all math explicit:
  - encoder: per level, two 3x3 convs + ReLU, then 2x max-pool
  - decoder: mirrors the encoder with nearest-neighbor 2x upsampling, skip
    concatenation from the matching encoder level, two 3x3 convs
  - deep supervision: every decoder level emits a 1x1-conv side output,
    upsampled to full resolution through a logistic squash; side 0 is the
    final prediction
  - 1x1 projection convs map encoder features to the shapes of a frozen
    mask-autoencoder ("GT encoder") used for intermediate-feature MSE

Training is plain minibatch Adam with manual backprop; everything is
deterministic given (seed, config, dataset).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .coarse import DegradeParams, degrade_mask, sample_seed
from .core import LossWeights, PromptBox, compose_five_channel
from .dataio import DatasetManifest
from .enrich import derive_prompt_box
from .errors import ConfigurationError, NumericError, ShapeError
from .losses import bce_loss, iou_loss, mse_feature_loss, ortho_loss, total_loss
from .nn import (
    Adam,
    conv1x1_backward,
    conv1x1_forward,
    conv3x3_backward,
    conv3x3_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    sigmoid,
    sigmoid_backward,
    upsample_backward,
    upsample_forward,
)
from .validation import check_binary_mask, check_five_channel


# ---------------------------------------------------------------------------
# Topology and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetTopology:
    in_channels: int
    levels: int = 3
    base_channels: int = 8
    skip_connections: bool = True
    deep_supervision: bool = True
    with_projections: bool = True

    def channels(self, level: int) -> int:
        return self.base_channels << level

    def side_levels(self) -> list[int]:
        return list(range(self.levels)) if self.deep_supervision else [0]

    def tensor_specs(self) -> list[tuple[str, tuple[int, ...]]]:
        """Deterministic (name, shape) list; also fixes init and payload order."""
        specs: list[tuple[str, tuple[int, ...]]] = []
        for l in range(self.levels):
            cin = self.in_channels if l == 0 else self.channels(l - 1)
            cl = self.channels(l)
            specs.append((f"enc{l}_conv1_w", (cl, cin, 3, 3)))
            specs.append((f"enc{l}_conv1_b", (cl,)))
            specs.append((f"enc{l}_conv2_w", (cl, cl, 3, 3)))
            specs.append((f"enc{l}_conv2_b", (cl,)))
        for l in reversed(range(self.levels)):
            cl = self.channels(l)
            upstream = self.channels(l + 1) if l < self.levels - 1 else self.channels(self.levels - 1)
            cin = upstream + (cl if self.skip_connections else 0)
            specs.append((f"dec{l}_conv1_w", (cl, cin, 3, 3)))
            specs.append((f"dec{l}_conv1_b", (cl,)))
            specs.append((f"dec{l}_conv2_w", (cl, cl, 3, 3)))
            specs.append((f"dec{l}_conv2_b", (cl,)))
        if self.with_projections:
            for l in range(self.levels):
                cl = self.channels(l)
                specs.append((f"proj{l}_w", (cl, cl, 1, 1)))
                specs.append((f"proj{l}_b", (cl,)))
        for l in self.side_levels():
            specs.append((f"side{l}_w", (1, self.channels(l), 1, 1)))
            specs.append((f"side{l}_b", (1,)))
        return specs


def init_tensors(topology: NetTopology, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, drawn in tensor_specs order."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in topology.tensor_specs():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            cout, cin, kh, kw = shape
            fan_in = cin * kh * kw
            fan_out = cout * kh * kw
            a = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-a, a, size=shape)
    return tensors


@dataclass
class RefinerParams:
    """Trained refiner weights plus the channel-usage flags they were trained with."""

    topology: NetTopology
    tensors: dict[str, np.ndarray]
    seed: int
    use_box_channel: bool = True
    use_mask_channel: bool = True


@dataclass
class GtEncoderParams:
    """Frozen mask-encoder weights (enc* tensors only)."""

    topology: NetTopology
    tensors: dict[str, np.ndarray]
    seed: int


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 6
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    hflip_augment: bool = True
    ortho_enabled: bool = True
    levels: int = 3
    base_channels: int = 8
    use_box_channel: bool = True
    use_mask_channel: bool = True
    degrade_fallback: DegradeParams | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    bce: list[float] = field(default_factory=list)
    iou: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    ortho: list[float] = field(default_factory=list)

    def append(self, total_v, bce_v, iou_v, mse_v, ortho_v):
        for v in (total_v, bce_v, iou_v, mse_v, ortho_v):
            if not np.isfinite(v):
                raise NumericError(f"non-finite loss recorded: {v}")
        self.total.append(float(total_v))
        self.bce.append(float(bce_v))
        self.iou.append(float(iou_v))
        self.mse.append(float(mse_v))
        self.ortho.append(float(ortho_v))

    def __len__(self):
        return len(self.total)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _check_divisible(h: int, w: int, levels: int) -> None:
    if h % (1 << levels) or w % (1 << levels):
        raise ShapeError(f"spatial dims {h}x{w} must be divisible by 2^{levels}")


def _forward(tensors, topo: NetTopology, x: np.ndarray, need_cache: bool):
    """Run the network on a (B, Cin, H, W) batch.

    Returns dict with side probabilities (list of (B, H, W), index 0 final),
    pre-pool encoder features, projected features, and a cache for backward.
    """
    b, cin, h, w = x.shape
    _check_divisible(h, w, topo.levels)
    cache: dict = {}
    enc_feats = []
    cur = x
    for l in range(topo.levels):
        a1, cols1 = conv3x3_forward(cur, tensors[f"enc{l}_conv1_w"], tensors[f"enc{l}_conv1_b"])
        r1 = relu_forward(a1)
        a2, cols2 = conv3x3_forward(r1, tensors[f"enc{l}_conv2_w"], tensors[f"enc{l}_conv2_b"])
        r2 = relu_forward(a2)
        pooled, idx = maxpool2_forward(r2)
        enc_feats.append(r2)
        if need_cache:
            cache[f"enc{l}"] = (cols1, a1, cols2, a2, idx)
        cur = pooled

    dec_feats: list[np.ndarray | None] = [None] * topo.levels
    d = cur
    for l in reversed(range(topo.levels)):
        u = upsample_forward(d, 2)
        cat = np.concatenate([u, enc_feats[l]], axis=1) if topo.skip_connections else u
        a1, cols1 = conv3x3_forward(cat, tensors[f"dec{l}_conv1_w"], tensors[f"dec{l}_conv1_b"])
        r1 = relu_forward(a1)
        a2, cols2 = conv3x3_forward(r1, tensors[f"dec{l}_conv2_w"], tensors[f"dec{l}_conv2_b"])
        r2 = relu_forward(a2)
        if need_cache:
            cache[f"dec{l}"] = (cols1, a1, cols2, a2, u.shape[1])
        dec_feats[l] = r2
        d = r2

    sides = []
    side_probs_full = []
    for l in topo.side_levels():
        logit = conv1x1_forward(dec_feats[l], tensors[f"side{l}_w"], tensors[f"side{l}_b"])
        up = upsample_forward(logit, 1 << l)
        prob = sigmoid(up)
        side_probs_full.append(prob)
        sides.append(prob[:, 0])

    proj_feats = []
    if topo.with_projections:
        for l in range(topo.levels):
            proj_feats.append(
                conv1x1_forward(enc_feats[l], tensors[f"proj{l}_w"], tensors[f"proj{l}_b"])
            )

    return {
        "sides": sides,
        "side_probs_full": side_probs_full,
        "enc_feats": enc_feats,
        "dec_feats": dec_feats,
        "proj_feats": proj_feats,
        "cache": cache if need_cache else None,
    }


def _backward(tensors, topo: NetTopology, fwd, d_sides, d_proj):
    """Accumulate parameter gradients for upstream side/projection gradients.

    d_sides aligns with topo.side_levels() (entries may be None); d_proj
    aligns with encoder levels (None allowed, or the whole list None).
    """
    cache = fwd["cache"]
    grads = {name: np.zeros_like(arr) for name, arr in tensors.items()}
    dec_grads: list[np.ndarray | None] = [None] * topo.levels
    enc_extra: list[np.ndarray | None] = [None] * topo.levels

    for pos, l in enumerate(topo.side_levels()):
        if d_sides is None or d_sides[pos] is None:
            continue
        prob = fwd["side_probs_full"][pos]
        dprob = d_sides[pos][:, None]
        dup = sigmoid_backward(dprob, prob)
        dlogit = upsample_backward(dup, 1 << l)
        dfeat, dw, db = conv1x1_backward(dlogit, fwd["dec_feats"][l], tensors[f"side{l}_w"])
        grads[f"side{l}_w"] += dw
        grads[f"side{l}_b"] += db
        dec_grads[l] = dfeat if dec_grads[l] is None else dec_grads[l] + dfeat

    if topo.with_projections and d_proj is not None:
        for l in range(topo.levels):
            if d_proj[l] is None:
                continue
            dfeat, dw, db = conv1x1_backward(
                d_proj[l], fwd["enc_feats"][l], tensors[f"proj{l}_w"]
            )
            grads[f"proj{l}_w"] += dw
            grads[f"proj{l}_b"] += db
            enc_extra[l] = dfeat if enc_extra[l] is None else enc_extra[l] + dfeat

    # Decoder chain: level 0 feeds from level 1, etc.; deepest feeds from the
    # pooled bottom. Walk levels 0..D-1 accumulating the upstream gradient.
    d_upstream = None
    for l in range(topo.levels):
        dout = dec_grads[l]
        if d_upstream is not None:
            dout = d_upstream if dout is None else dout + d_upstream
        cols1, a1, cols2, a2, up_ch = cache[f"dec{l}"]
        if dout is None:
            dout = np.zeros_like(a2)
        da2 = relu_backward(dout, a2)
        dr1, dw2, db2 = conv3x3_backward(da2, cols2, tensors[f"dec{l}_conv2_w"])
        grads[f"dec{l}_conv2_w"] += dw2
        grads[f"dec{l}_conv2_b"] += db2
        da1 = relu_backward(dr1, a1)
        dcat, dw1, db1 = conv3x3_backward(da1, cols1, tensors[f"dec{l}_conv1_w"])
        grads[f"dec{l}_conv1_w"] += dw1
        grads[f"dec{l}_conv1_b"] += db1
        if topo.skip_connections:
            du = dcat[:, :up_ch]
            dskip = dcat[:, up_ch:]
            enc_extra[l] = dskip if enc_extra[l] is None else enc_extra[l] + dskip
        else:
            du = dcat
        d_upstream = upsample_backward(du, 2)

    # d_upstream is now the gradient at the pooled output of the last encoder
    # level; walk the encoder from deepest to shallowest.
    dpooled = d_upstream
    for l in reversed(range(topo.levels)):
        cols1, a1, cols2, a2, idx = cache[f"enc{l}"]
        dr2 = maxpool2_backward(dpooled, idx)
        if enc_extra[l] is not None:
            dr2 = dr2 + enc_extra[l]
        da2 = relu_backward(dr2, a2)
        dr1, dw2, db2 = conv3x3_backward(da2, cols2, tensors[f"enc{l}_conv2_w"])
        grads[f"enc{l}_conv2_w"] += dw2
        grads[f"enc{l}_conv2_b"] += db2
        da1 = relu_backward(dr1, a1)
        dcur, dw1, db1 = conv3x3_backward(da1, cols1, tensors[f"enc{l}_conv1_w"])
        grads[f"enc{l}_conv1_w"] += dw1
        grads[f"enc{l}_conv1_b"] += db1
        dpooled = dcur
    return grads


def refiner_forward(x, params: RefinerParams):
    """Single-sample forward pass.

    Returns (side_outputs, encoder_features): side_outputs is a list of
    (H, W) probability masks with index 0 the final prediction;
    encoder_features are the post-projection maps, shallowest first.
    """
    arr = check_five_channel(x)
    fwd = _forward(params.tensors, params.topology, arr[None], need_cache=False)
    sides = [s[0] for s in fwd["sides"]]
    feats = [f[0] for f in fwd["proj_feats"]]
    return sides, feats


def encoder_features(gt_params: GtEncoderParams, masks: np.ndarray) -> list[np.ndarray]:
    """Frozen-encoder features of a (B, H, W) mask batch, shallowest first."""
    topo = gt_params.topology
    x = masks[:, None]
    feats = []
    cur = x
    for l in range(topo.levels):
        a1, _ = conv3x3_forward(cur, gt_params.tensors[f"enc{l}_conv1_w"], gt_params.tensors[f"enc{l}_conv1_b"])
        r1 = relu_forward(a1)
        a2, _ = conv3x3_forward(r1, gt_params.tensors[f"enc{l}_conv2_w"], gt_params.tensors[f"enc{l}_conv2_b"])
        r2 = relu_forward(a2)
        feats.append(r2)
        cur, _ = maxpool2_forward(r2)
    return feats


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _assert_finite(tensors: dict[str, np.ndarray]) -> None:
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"parameter {name} became non-finite")


def _conv_weight_names(tensors: dict[str, np.ndarray]) -> list[str]:
    return [name for name in sorted(tensors) if name.endswith("_w")]


def ortho_penalty(tensors: dict[str, np.ndarray]) -> float:
    """Sum of ||W W^T - E||_F over all convolution weight matrices."""
    value, _ = ortho_loss([tensors[n].reshape(tensors[n].shape[0], -1) for n in _conv_weight_names(tensors)])
    return value


def train_gt_encoder(dataset: DatasetManifest, config: TrainConfig) -> tuple[GtEncoderParams, TrainHistory]:
    """Self-encode GT masks (BCE loss) and return the frozen encoder.

    The throwaway mirror decoder has no skip connections, so every encoder
    stage must carry shape information on its own.
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot train a GT encoder on an empty dataset")
    masks = [check_binary_mask(s.load_gt(), s.id) for s in dataset]
    h, w = masks[0].shape
    _check_divisible(h, w, config.levels)
    topo = NetTopology(
        in_channels=1,
        levels=config.levels,
        base_channels=config.base_channels,
        skip_connections=False,
        deep_supervision=False,
        with_projections=False,
    )
    tensors = init_tensors(topo, config.seed)
    adam = Adam(tensors, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    history = TrainHistory()
    n = len(masks)
    for _ in range(config.iterations):
        batch_idx = rng.integers(0, n, size=config.batch_size)
        flips = rng.random(config.batch_size) < 0.5 if config.hflip_augment else np.zeros(config.batch_size, bool)
        gt = np.stack([masks[i][:, ::-1] if f else masks[i] for i, f in zip(batch_idx, flips)])
        fwd = _forward(tensors, topo, gt[:, None], need_cache=True)
        side = fwd["sides"][0]
        bsz = gt.shape[0]
        d_side = np.zeros_like(side)
        bce_sum = 0.0
        for b in range(bsz):
            v, g = bce_loss(side[b], gt[b])
            bce_sum += v
            d_side[b] = g / bsz
        grads = _backward(tensors, topo, fwd, [d_side], None)
        adam.step(grads)
        _assert_finite(tensors)
        bce_mean = bce_sum / bsz
        history.append(bce_mean, bce_mean, 0.0, 0.0, 0.0)
    enc_only = {k: v.copy() for k, v in tensors.items() if k.startswith("enc")}
    return GtEncoderParams(topology=topo, tensors=enc_only, seed=config.seed), history


def _sample_arrays(sample, config: TrainConfig):
    """Materialize (image, gt, coarse, box) for one manifest sample."""
    image = sample.load_image()
    gt = sample.load_gt()
    coarse = sample.load_coarse()
    if coarse is None:
        if config.degrade_fallback is None:
            raise ConfigurationError(f"sample {sample.id} has no coarse mask")
        per = replace(config.degrade_fallback, seed=sample_seed(config.degrade_fallback.seed, sample.id))
        coarse = degrade_mask(gt, per)
    box = sample.box
    if box is None:
        if not gt.any():
            raise ConfigurationError(f"sample {sample.id} has empty GT and no prompt box")
        box = derive_prompt_box(gt)
    return image, gt, coarse, box


def build_input(image, coarse, box: PromptBox, use_box_channel=True, use_mask_channel=True) -> np.ndarray:
    """Compose the five-channel input, zeroing ablated channels."""
    x = compose_five_channel(image, coarse, box)
    if not use_mask_channel:
        x[3] = 0.0
    if not use_box_channel:
        x[4] = 0.0
    return x


def train_refiner(
    dataset: DatasetManifest,
    gt_encoder: GtEncoderParams,
    config: TrainConfig,
) -> tuple[RefinerParams, TrainHistory]:
    """Minibatch Adam on the weighted four-term loss.

    Cross-entropy and soft-IoU are summed over all side outputs; the feature
    MSE compares projected encoder features against the frozen mask-encoder's
    features of the GT; the orthogonality term covers every convolution
    weight matrix (flattened per filter). Horizontal flips are applied
    jointly to (image, gt, coarse, box) with probability 0.5 when enabled.
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    data = [_sample_arrays(s, config) for s in dataset]
    h, w = data[0][1].shape
    _check_divisible(h, w, config.levels)
    if gt_encoder.topology.levels != config.levels or gt_encoder.topology.base_channels != config.base_channels:
        raise ConfigurationError("GT encoder topology does not match the refiner config")

    topo = NetTopology(
        in_channels=5,
        levels=config.levels,
        base_channels=config.base_channels,
        skip_connections=True,
        deep_supervision=True,
        with_projections=True,
    )
    tensors = init_tensors(topo, config.seed)
    adam = Adam(tensors, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    weights = config.loss_weights
    history = TrainHistory()
    n = len(data)

    input_cache: dict[tuple[int, bool], np.ndarray] = {}
    gt_cache: dict[tuple[int, bool], np.ndarray] = {}
    feat_cache: dict[tuple[int, bool], list[np.ndarray]] = {}

    def sample_tensors(i: int, flip: bool):
        key = (i, flip)
        if key not in input_cache:
            image, gt, coarse, box = data[i]
            if flip:
                image = image[:, ::-1].copy()
                gt = gt[:, ::-1].copy()
                coarse = coarse[:, ::-1].copy()
                box = box.flipped_horizontal(gt.shape[1])
            input_cache[key] = build_input(
                image, coarse, box, config.use_box_channel, config.use_mask_channel
            )
            gt_cache[key] = gt
            feat_cache[key] = [f[0] for f in encoder_features(gt_encoder, gt[None])]
        return input_cache[key], gt_cache[key], feat_cache[key]

    conv_names = _conv_weight_names(tensors)
    n_stages = topo.levels

    for _ in range(config.iterations):
        batch_idx = rng.integers(0, n, size=config.batch_size)
        flips = rng.random(config.batch_size) < 0.5 if config.hflip_augment else np.zeros(config.batch_size, bool)
        xs, gts, feats = zip(*(sample_tensors(int(i), bool(f)) for i, f in zip(batch_idx, flips)))
        x = np.stack(xs)
        bsz = x.shape[0]

        fwd = _forward(tensors, topo, x, need_cache=True)
        sides = fwd["sides"]
        proj = fwd["proj_feats"]

        d_sides = [np.zeros_like(s) for s in sides]
        d_proj = [np.zeros_like(p) for p in proj]
        bce_sum = iou_sum = mse_sum = 0.0
        for b in range(bsz):
            gt_b = gts[b]
            for s_idx, side in enumerate(sides):
                bv, bg = bce_loss(side[b], gt_b)
                iv, ig = iou_loss(side[b], gt_b)
                bce_sum += bv
                iou_sum += iv
                d_sides[s_idx][b] += (weights.lambda1 * bg + weights.lambda2 * ig) / bsz
            sample_feats = [proj[l][b] for l in range(n_stages)]
            mv, mg = mse_feature_loss(sample_feats, feats[b])
            mse_sum += mv
            for l in range(n_stages):
                d_proj[l][b] += weights.lambda3 * mg[l] / bsz

        grads = _backward(tensors, topo, fwd, d_sides, d_proj)

        if config.ortho_enabled:
            ortho_v, ortho_g = ortho_loss([tensors[nm].reshape(tensors[nm].shape[0], -1) for nm in conv_names])
            for nm, g in zip(conv_names, ortho_g):
                grads[nm] += weights.lambda4 * g.reshape(tensors[nm].shape)
        else:
            ortho_v = 0.0

        adam.step(grads)
        _assert_finite(tensors)

        bce_v = bce_sum / bsz
        iou_v = iou_sum / bsz
        mse_v = mse_sum / bsz
        history.append(total_loss(bce_v, iou_v, mse_v, ortho_v, weights), bce_v, iou_v, mse_v, ortho_v)

    params = RefinerParams(
        topology=topo,
        tensors=tensors,
        seed=config.seed,
        use_box_channel=config.use_box_channel,
        use_mask_channel=config.use_mask_channel,
    )
    return params, history


def refine(image, coarse, box: PromptBox, params: RefinerParams) -> np.ndarray:
    """Compose the five-channel input and return the final side output."""
    x = build_input(image, coarse, box, params.use_box_channel, params.use_mask_channel)
    sides, _ = refiner_forward(x, params)
    return sides[0]


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_skipped: int  # near-zero analytic/numeric pairs (singular-point convention)
    h: float
    seed: int


def _full_loss_and_grads(tensors, topo, x, gt, gt_feats, weights, want_grads: bool):
    fwd = _forward(tensors, topo, x[None], need_cache=want_grads)
    sides = fwd["sides"]
    proj = fwd["proj_feats"]
    bce_sum = iou_sum = 0.0
    d_sides = [np.zeros_like(s) for s in sides] if want_grads else None
    for s_idx, side in enumerate(sides):
        bv, bg = bce_loss(side[0], gt)
        iv, ig = iou_loss(side[0], gt)
        bce_sum += bv
        iou_sum += iv
        if want_grads:
            d_sides[s_idx][0] = weights.lambda1 * bg + weights.lambda2 * ig
    mse_v, mse_g = mse_feature_loss([p[0] for p in proj], gt_feats)
    conv_names = _conv_weight_names(tensors)
    ortho_v, ortho_g = ortho_loss([tensors[nm].reshape(tensors[nm].shape[0], -1) for nm in conv_names])
    value = total_loss(bce_sum, iou_sum, mse_v, ortho_v, weights)
    if not want_grads:
        return value, None
    d_proj = [np.zeros_like(p) for p in proj]
    for l in range(topo.levels):
        d_proj[l][0] = weights.lambda3 * mse_g[l]
    grads = _backward(tensors, topo, fwd, d_sides, d_proj)
    for nm, g in zip(conv_names, ortho_g):
        grads[nm] += weights.lambda4 * g.reshape(tensors[nm].shape)
    return value, grads


def check_gradients(
    params: RefinerParams,
    x,
    gt,
    h: float = 1e-5,
    n_params: int = 200,
    seed: int = 0,
    gt_encoder: GtEncoderParams | None = None,
    weights: LossWeights | None = None,
) -> GradCheckReport:
    """Compare backprop against central finite differences on the full loss.

    Parameters are visited in a seeded random order until n_params have been
    compared (or all are exhausted). Pairs where both the analytic and
    numeric gradient are below 1e-6 in magnitude are skipped rather than
    failed (covers the ||G||_F = 0 ortho convention and dead-rectifier
    paths). Meant for small instances (<= 16x16, <= 2 levels).
    """
    x = check_five_channel(x)
    gt = check_binary_mask(gt, "gt")
    topo = params.topology
    weights = weights or LossWeights()
    if gt_encoder is None:
        gt_topo = NetTopology(
            in_channels=1,
            levels=topo.levels,
            base_channels=topo.base_channels,
            skip_connections=False,
            deep_supervision=False,
            with_projections=False,
        )
        gt_tensors = {
            k: v for k, v in init_tensors(gt_topo, seed + 1).items() if k.startswith("enc")
        }
        gt_encoder = GtEncoderParams(topology=gt_topo, tensors=gt_tensors, seed=seed + 1)
    gt_feats = [f[0] for f in encoder_features(gt_encoder, gt[None])]

    tensors = {k: v.copy() for k, v in params.tensors.items()}
    _, grads = _full_loss_and_grads(tensors, topo, x, gt, gt_feats, weights, want_grads=True)

    names = sorted(tensors)
    sizes = np.array([tensors[nm].size for nm in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    order = rng.permutation(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    max_rel = 0.0
    n_checked = 0
    n_skipped = 0
    for flat in order:
        if n_checked >= n_params:
            break
        flat = int(flat)
        t_idx = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[t_idx]
        local = flat - offsets[t_idx]
        view = tensors[name].reshape(-1)
        orig = view[local]
        view[local] = orig + h
        f_plus, _ = _full_loss_and_grads(tensors, topo, x, gt, gt_feats, weights, want_grads=False)
        view[local] = orig - h
        f_minus, _ = _full_loss_and_grads(tensors, topo, x, gt, gt_feats, weights, want_grads=False)
        view[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = grads[name].reshape(-1)[local]
        denom = max(abs(analytic), abs(numeric))
        if denom < 1e-6:
            n_skipped += 1
            continue
        n_checked += 1
        max_rel = max(max_rel, abs(analytic - numeric) / denom)

    return GradCheckReport(
        max_rel_error=max_rel,
        n_checked=n_checked,
        n_skipped=n_skipped,
        h=h,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Parameter files: one-line JSON header + little-endian float64 payload
# ---------------------------------------------------------------------------


def save_params(obj: RefinerParams | GtEncoderParams, path) -> None:
    topo = obj.topology
    specs = [(name, list(obj.tensors[name].shape)) for name in sorted(obj.tensors)]
    payload = b"".join(
        np.ascontiguousarray(obj.tensors[name], dtype="<f8").tobytes() for name, _ in specs
    )
    header = {
        "version": 1,
        "kind": "refiner" if isinstance(obj, RefinerParams) else "gt_encoder",
        "topology": {
            "in_channels": topo.in_channels,
            "levels": topo.levels,
            "base_channels": topo.base_channels,
            "skip_connections": topo.skip_connections,
            "deep_supervision": topo.deep_supervision,
            "with_projections": topo.with_projections,
        },
        "seed": obj.seed,
        "flags": (
            {"use_box_channel": obj.use_box_channel, "use_mask_channel": obj.use_mask_channel}
            if isinstance(obj, RefinerParams)
            else {}
        ),
        "tensors": specs,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n" + payload
    Path(path).write_bytes(blob)


def load_params(path) -> RefinerParams | GtEncoderParams:
    blob = Path(path).read_bytes()
    nl = blob.index(b"\n")
    header = json.loads(blob[:nl].decode())
    payload = blob[nl + 1 :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise NumericError(f"{path}: parameter payload does not match recorded SHA-256")
    topo = NetTopology(**header["topology"])
    tensors = {}
    pos = 0
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).reshape(shape)
        tensors[name] = arr.astype(np.float64).copy()
        pos += count * 8
    if header["kind"] == "refiner":
        return RefinerParams(
            topology=topo,
            tensors=tensors,
            seed=header["seed"],
            use_box_channel=header["flags"]["use_box_channel"],
            use_mask_channel=header["flags"]["use_mask_channel"],
        )
    return GtEncoderParams(topology=topo, tensors=tensors, seed=header["seed"])
