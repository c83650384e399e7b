"""Acceptance suite: one test per criterion, printing a PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
The trained benchmarks are session-scoped fixtures shared across criteria.
"""
import hashlib
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from disrefine.cli import main as cli_main
from disrefine.coarse import DegradeParams, degrade_manifest
from disrefine.core import LossWeights, MetricConfig, PromptBox, compose_five_channel
from disrefine.dataio import generate_synthetic_dataset, load_dataset
from disrefine.enrich import connected_components, enrich_manifest
from disrefine.losses import bce_loss, iou_loss, mse_feature_loss, ortho_loss, total_loss
from disrefine.metrics import evaluate_dataset, f_measure_curve, hce, mae, s_measure, e_measure, weighted_f_measure
from disrefine.pipeline import predict_manifest, quantize_mask, run_ablation, split_manifest
from disrefine.refiner import (
    NetTopology,
    RefinerParams,
    TrainConfig,
    check_gradients,
    init_tensors,
    ortho_penalty,
    refine,
    train_gt_encoder,
    train_refiner,
)

from oracles import (
    e_measure_naive,
    finite_difference_grad,
    fmax_naive,
    hce_naive,
    mae_naive,
    s_measure_naive,
    weighted_f_naive,
)


def _verdict(number: int, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, f"criterion {number}: {detail}"


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


# ---------------------------------------------------------------------------
# Criterion 1: gradient correctness, losses + end-to-end refiner
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    t0 = time.monotonic()
    worst = 0.0
    checked = 0
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0.05, 0.95, (8, 8))
        gt = (rng.random((8, 8)) < 0.5).astype(np.float64)
        _, g = bce_loss(pred, gt)
        worst = max(worst, _rel_err(g, finite_difference_grad(lambda p: bce_loss(p, gt)[0], pred)))
        _, g = iou_loss(pred, gt)
        worst = max(worst, _rel_err(g, finite_difference_grad(lambda p: iou_loss(p, gt)[0], pred)))
        checked += 2 * pred.size

        feats = [rng.standard_normal((3, 4)), rng.standard_normal((2, 5))]
        targets = [rng.standard_normal((3, 4)), rng.standard_normal((2, 5))]
        _, grads = mse_feature_loss(feats, targets)
        for k in range(2):
            fd = finite_difference_grad(
                lambda f, k=k: mse_feature_loss([f if j == k else feats[j] for j in range(2)], targets)[0],
                feats[k],
            )
            worst = max(worst, _rel_err(grads[k], fd))
            checked += feats[k].size

        w = rng.standard_normal((3, 6))
        _, grads = ortho_loss([w])
        worst = max(worst, _rel_err(grads[0], finite_difference_grad(lambda m: ortho_loss([m])[0], w)))
        checked += w.size

        # end-to-end refiner on a 16x16, 2-level instance
        topo = NetTopology(in_channels=5, levels=2, base_channels=4)
        params = RefinerParams(topology=topo, tensors=init_tensors(topo, seed + 10), seed=seed + 10)
        image = rng.random((16, 16, 3))
        coarse = rng.random((16, 16))
        x = compose_five_channel(image, coarse, PromptBox(2, 2, 13, 13))
        report = check_gradients(params, x, gt=(rng.random((16, 16)) < 0.4).astype(np.float64),
                                 h=1e-5, n_params=200, seed=seed)
        worst = max(worst, report.max_rel_error)
        checked += report.n_checked
        assert report.n_checked >= 200

    elapsed = time.monotonic() - t0
    ok = worst < 1e-3 and elapsed < 120.0
    _verdict(1, ok, f"max rel gradient error {worst:.2e} over {checked} comparisons x 3 seeds "
                    f"(< 1e-3), runtime {elapsed:.1f}s (< 120s)")


# ---------------------------------------------------------------------------
# Criterion 2: loss unit values
# ---------------------------------------------------------------------------


def test_criterion_2_loss_unit_values():
    rng = np.random.default_rng(0)
    gt = (rng.random((6, 6)) < 0.5).astype(np.float64)
    checks = []
    v, _ = bce_loss(np.full((6, 6), 0.5), gt)
    checks.append(abs(v - np.log(2.0)) < 1e-12)
    nonempty = np.zeros((4, 4))
    nonempty[:2] = 1.0
    checks.append(iou_loss(nonempty.copy(), nonempty)[0] == 0.0)
    checks.append(iou_loss(1.0 - nonempty, nonempty)[0] == 1.0)
    checks.append(ortho_loss([np.eye(5)])[0] == 0.0)
    checks.append(abs(ortho_loss([2.0 * np.eye(4)])[0] - 6.0) < 1e-12)
    checks.append(abs(total_loss(0.1, 0.2, 0.3, 0.4, LossWeights()) - 2.4000004) < 1e-12)
    ok = all(checks)
    _verdict(2, ok, "bce(0.5)=ln2, iou identity/disjoint = 0/1, ortho(I)=0, "
                    "ortho(2I,n=4)=6, weighted total = 2.4000004 (all within 1e-12)")


# ---------------------------------------------------------------------------
# Criterion 3: metric oracle equivalence on 200 random 8x8 fixtures
# ---------------------------------------------------------------------------


def test_criterion_3_metric_oracle_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    cfg = MetricConfig()
    worst = 0.0
    hce_mismatches = 0
    for i in range(200):
        pred = rng.random((8, 8))
        gt = (rng.random((8, 8)) < 0.45).astype(np.float64)
        if not gt.any():
            gt[rng.integers(0, 8), rng.integers(0, 8)] = 1.0
        worst = max(worst, abs(mae(pred, gt) - mae_naive(pred, gt)))
        worst = max(worst, abs(f_measure_curve(pred, gt, cfg)[1] - fmax_naive(pred, gt)))
        worst = max(worst, abs(weighted_f_measure(pred, gt, cfg) - weighted_f_naive(pred, gt)))
        worst = max(worst, abs(s_measure(pred, gt) - s_measure_naive(pred, gt)))
        worst = max(worst, abs(e_measure(pred, gt, cfg) - e_measure_naive(pred, gt)))
        gamma = (0, 1, 2)[i % 3]  # gamma 5 erodes every 8x8 region away
        if hce(pred, gt, MetricConfig(hce_gamma=gamma)) != hce_naive(pred, gt, gamma):
            hce_mismatches += 1
    elapsed = time.monotonic() - t0
    ok = worst < 1e-9 and hce_mismatches == 0 and elapsed < 60.0
    _verdict(3, ok, f"200 fixtures: max |impl - oracle| {worst:.2e} (< 1e-9), "
                    f"hce mismatches {hce_mismatches}, runtime {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# Criterion 4: enrichment properties
# ---------------------------------------------------------------------------


def test_criterion_4_enrichment():
    three = np.zeros((16, 16))
    three[1:4, 1:4] = 1.0
    three[2:6, 10:14] = 1.0
    three[10:14, 4:9] = 1.0
    comps = connected_components(three)
    ok = len(comps) == 3

    rng = np.random.default_rng(3)
    for _ in range(100):
        mask = (rng.random((12, 12)) < 0.4).astype(np.float64)
        comps = connected_components(mask)
        if comps:
            stacked = np.stack(comps)
            ok = ok and bool((stacked.sum(axis=0) == mask).all())  # union equality
            ok = ok and stacked.sum(axis=0).max() <= 1.0  # pairwise disjoint
        else:
            ok = ok and not mask.any()

    diag = np.zeros((2, 2))
    diag[0, 0] = diag[1, 1] = 1.0
    ok = ok and len(connected_components(diag, connectivity=4)) == 2
    ok = ok and len(connected_components(diag, connectivity=8)) == 1
    _verdict(4, ok, "3-blob fixture -> 3 pairs; union/disjointness exact on 100 random masks; "
                    "diagonal fixture: 2 components at conn-4, 1 at conn-8")


# ---------------------------------------------------------------------------
# Criterion 5: desk-scale refinement benchmark (and shared fixture)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def bench64(tmp_path_factory):
    """Seed-7 benchmark: 250 sources at 64x64, 200 train / 50 test, enriched,
    degraded coarse stage, 2000 training iterations."""
    t0 = time.monotonic()
    root = tmp_path_factory.mktemp("bench64") / "data"
    manifest = generate_synthetic_dataset(root, seed=7, count=250, size=64)
    train_m, test_m = split_manifest(manifest, 50 / 250)
    degrade = DegradeParams(seed=7, dilate_erode_radius=2, boundary_blur_sigma=1.2,
                            drop_component_prob=0.15, spurious_blob_prob=0.25)
    train_rich = degrade_manifest(enrich_manifest(train_m, min_area=10), degrade)
    test_rich = degrade_manifest(enrich_manifest(test_m, min_area=10), degrade)
    enc_cfg = TrainConfig(iterations=250, batch_size=6, learning_rate=1e-3, seed=7,
                          levels=3, base_channels=8)
    gt_encoder, _ = train_gt_encoder(train_rich, enc_cfg)
    cfg = TrainConfig(iterations=2000, batch_size=6, learning_rate=1e-3, seed=7,
                      levels=3, base_channels=8)
    params, history = train_refiner(train_rich, gt_encoder, cfg)
    metric_cfg = MetricConfig()
    preds = predict_manifest(test_rich, params)
    coarse_preds = {s.id: quantize_mask(s.load_coarse()) for s in test_rich}
    refined_report = evaluate_dataset(preds, test_rich, metric_cfg)
    coarse_report = evaluate_dataset(coarse_preds, test_rich, metric_cfg)
    return {
        "elapsed": time.monotonic() - t0,
        "params": params,
        "history": history,
        "test": test_rich,
        "test_sources": test_m,
        "refined": refined_report.aggregate,
        "coarse": coarse_report.aggregate,
        "degrade": degrade,
    }


def test_criterion_5_refinement_benchmark(bench64):
    mae_ratio = bench64["refined"]["mae"] / bench64["coarse"]["mae"]
    fmax_up = bench64["refined"]["fmax"] > bench64["coarse"]["fmax"]
    history = bench64["history"]
    improved = float(np.mean(history.total[-50:])) < float(np.mean(history.total[:50]))
    ok = mae_ratio <= 0.75 and fmax_up and improved and bench64["elapsed"] <= 600.0
    _verdict(5, ok, f"mae(refined)/mae(coarse) = {mae_ratio:.3f} (<= 0.75); "
                    f"fmax {bench64['refined']['fmax']:.3f} > {bench64['coarse']['fmax']:.3f}; "
                    f"loss window improved {improved}; elapsed {bench64['elapsed']:.0f}s (<= 600s)")


def test_prompt_responsiveness(bench64):
    """Moving the box to another object redirects the prediction (Fig.-4 loop)."""
    per_source: dict[str, list] = {}
    for sample in bench64["test"]:
        per_source.setdefault(sample.id.split("#")[0], []).append(sample)
    probes = 0
    responsive = 0
    for source_id, group in per_source.items():
        if len(group) < 2:
            continue
        a, b = group[0], group[1]
        image = a.load_image()
        empty = np.zeros(image.shape[:2])
        mask_a = a.load_gt()
        mask_b = b.load_gt()
        pred_a = refine(image, empty, a.box, bench64["params"])
        pred_b = refine(image, empty, b.box, bench64["params"])
        probes += 1
        mass_aa = float((pred_a * mask_a).sum())
        mass_ab = float((pred_a * mask_b).sum())
        mass_ba = float((pred_b * mask_a).sum())
        mass_bb = float((pred_b * mask_b).sum())
        if mass_aa > mass_ab and mass_bb > mass_ba:
            responsive += 1
    assert probes >= 5
    rate = responsive / probes
    print(f"\nprompt responsiveness: {responsive}/{probes} probes ({rate:.0%})")
    assert rate >= 0.8


# ---------------------------------------------------------------------------
# Criteria 6 + 7: ablation ordering and the orthogonality effect
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def bench_ablation(tmp_path_factory):
    """Multi-object, data-limited 32x32 benchmark: 24 training sources whose
    enrichment yields ~2.5x pairs, evaluated on 48 held-out sources."""
    root = tmp_path_factory.mktemp("ablate") / "data"
    pool = generate_synthetic_dataset(root, seed=42, count=300, size=32)
    multi = [s.id for s in pool
             if len([c for c in connected_components(s.load_gt()) if c.sum() >= 10]) >= 2]
    train_m = pool.subset(multi[:24])
    test_m = pool.subset(multi[24:72])
    degrade = DegradeParams(seed=11, dilate_erode_radius=2, boundary_blur_sigma=1.0,
                            drop_component_prob=0.2, spurious_blob_prob=0.25)
    metric_cfg = MetricConfig()
    train_rich = degrade_manifest(enrich_manifest(train_m, min_area=10), degrade)
    test_rich = degrade_manifest(enrich_manifest(test_m, min_area=10), degrade)

    per_seed = {}
    for seed in (0, 1, 2):
        cfg = TrainConfig(iterations=700, batch_size=6, learning_rate=1e-3, seed=seed,
                          levels=2, base_channels=8)
        rows = {r["row"]: r for r in run_ablation(
            train_m, test_m, cfg, degrade, out_dir=None, metric_cfg=metric_cfg,
            min_area=10, gt_encoder_iterations=150,
        )}
        enc, _ = train_gt_encoder(train_rich, replace(cfg, iterations=150))
        p_off, _ = train_refiner(train_rich, enc, replace(cfg, ortho_enabled=False))
        fmax_off = evaluate_dataset(
            predict_manifest(test_rich, p_off), test_rich, metric_cfg
        ).aggregate["fmax"]
        per_seed[seed] = {
            "rows": rows,
            "ortho_on": ortho_penalty(rows["box_mask_enrich"]["params"].tensors),
            "ortho_off": ortho_penalty(p_off.tensors),
            "fmax_on": rows["box_mask_enrich"]["fmax"],
            "fmax_off": fmax_off,
        }
    return per_seed


def test_criterion_6_ablation_ordering(bench_ablation):
    pair_wins = enrich_wins = 0
    details = []
    for seed, data in bench_ablation.items():
        rows = data["rows"]
        both = rows["box_mask"]["fmax"]
        box = rows["box_only"]["fmax"]
        mask = rows["mask_only"]["fmax"]
        rich = rows["box_mask_enrich"]["fmax"]
        pair_wins += both >= max(box, mask)
        enrich_wins += rich >= both
        details.append(f"seed {seed}: box {box:.3f} mask {mask:.3f} both {both:.3f} enrich {rich:.3f}")
    ok = pair_wins >= 2 and enrich_wins >= 2
    _verdict(6, ok, f"box+mask >= max(box, mask) in {pair_wins}/3 seeds; "
                    f"enriched >= unenriched in {enrich_wins}/3 seeds ({'; '.join(details)})")


def test_criterion_7_orthogonality_effect(bench_ablation):
    penalty_wins = tax_ok = 0
    details = []
    for seed, data in bench_ablation.items():
        penalty_wins += data["ortho_on"] <= data["ortho_off"]
        tax_ok += data["fmax_on"] >= data["fmax_off"] - 0.02
        details.append(
            f"seed {seed}: penalty {data['ortho_on']:.2f} vs {data['ortho_off']:.2f}, "
            f"fmax {data['fmax_on']:.3f} vs {data['fmax_off']:.3f}"
        )
    ok = penalty_wins >= 2 and tax_ok >= 2
    _verdict(7, ok, f"ortho penalty reduced in {penalty_wins}/3 seeds; "
                    f"fmax within 2% in {tax_ok}/3 seeds ({'; '.join(details)})")


# ---------------------------------------------------------------------------
# Criterion 8: determinism of every command + parallel evaluation
# ---------------------------------------------------------------------------


def _tree_hash(root) -> str:
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def test_criterion_8_determinism(tmp_path):
    import json

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "train": {"levels": 2, "base_channels": 4, "iterations": 25,
                  "batch_size": 3, "gt_encoder_iterations": 12},
    }))

    hashes = {}
    for run in ("r1", "r2"):
        base = tmp_path / run
        raw, enr = base / "raw", base / "ds"
        assert cli_main(["synth", "--out", str(raw), "--seed", "3", "--count", "8", "--size", "32"]) == 0
        assert cli_main(["enrich", "--root", str(raw), "--out", str(enr), "--min-area", "8"]) == 0
        assert cli_main(["degrade", "--root", str(enr), "--seed", "4"]) == 0
        assert cli_main(["train-gtenc", "--root", str(enr), "--seed", "5",
                         "--config", str(cfg_path), "--out", str(base / "enc.bin")]) == 0
        assert cli_main(["train", "--root", str(enr), "--seed", "5", "--config", str(cfg_path),
                         "--gt-encoder", str(base / "enc.bin"), "--out", str(base / "params.bin")]) == 0
        assert cli_main(["infer", "--root", str(enr), "--params", str(base / "params.bin"),
                         "--out", str(base / "pred")]) == 0
        assert cli_main(["eval", "--root", str(enr), "--pred-dir", str(base / "pred"),
                         "--out", str(base / "report.csv")]) == 0
        hashes[run] = _tree_hash(base)
    identical = hashes["r1"] == hashes["r2"]

    # parallel evaluation equals sequential bit for bit
    enr = tmp_path / "r1" / "ds"
    manifest = load_dataset(enr)
    from disrefine.pipeline import load_predictions

    preds = load_predictions(tmp_path / "r1" / "pred", manifest)
    saved = os.environ.get("DIS_REFINE_THREADS")
    try:
        os.environ["DIS_REFINE_THREADS"] = "1"
        seq = evaluate_dataset(preds, manifest)
        os.environ["DIS_REFINE_THREADS"] = "8"
        par = evaluate_dataset(preds, manifest)
    finally:
        if saved is None:
            os.environ.pop("DIS_REFINE_THREADS", None)
        else:
            os.environ["DIS_REFINE_THREADS"] = saved
    parallel_equal = seq.per_sample == par.per_sample and seq.aggregate == par.aggregate

    ok = identical and parallel_equal
    _verdict(8, ok, f"synth/enrich/degrade/train-gtenc/train/infer/eval reruns byte-identical: "
                    f"{identical}; parallel eval == sequential: {parallel_equal}")
