"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 empty result, 4 data error.
Every command is deterministic given its flags plus --seed. Flags override
keys of the optional JSON --config file; see README for the schema.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .coarse import degrade_manifest
from .dataio import generate_synthetic_dataset, load_dataset, write_report
from .enrich import enrich_manifest, write_enriched_root
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
from .metrics import MissingPredictionError, evaluate_dataset
from .pipeline import (
    degrade_params_from_config,
    load_config,
    load_predictions,
    metric_config_from_config,
    predict_manifest,
    run_ablation,
    split_manifest,
    train_config_from_config,
)
from .refiner import load_params, save_params, train_gt_encoder, train_refiner

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_EMPTY = 3
EXIT_DATA = 4

_DATA_ERRORS = (
    LayoutError,
    IngestionError,
    ConfigurationError,
    InvalidBoxError,
    EmptyMaskError,
    ShapeError,
    NumericError,
    MissingPredictionError,
    FileNotFoundError,
)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--root", type=Path, help="dataset root (im/, gt/, ...)")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--out", type=Path, default=None, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disrefine", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    _add_common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--size", type=int, default=None)

    p = sub.add_parser("enrich", help="split multi-object GTs into per-object pairs")
    _add_common(p)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=None)

    p = sub.add_parser("degrade", help="write degraded coarse masks for a dataset")
    _add_common(p)
    p.add_argument("--radius", type=int, default=None, help="max dilate/erode radius")
    p.add_argument("--blur-sigma", type=float, default=None)
    p.add_argument("--drop-prob", type=float, default=None)
    p.add_argument("--blob-prob", type=float, default=None)

    p = sub.add_parser("train-gtenc", help="pre-train the ground-truth encoder")
    _add_common(p)
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("train", help="train the refinement network")
    _add_common(p)
    p.add_argument("--gt-encoder", type=Path, default=None, help="pre-trained encoder params")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--gt-iterations", type=int, default=None)
    p.add_argument("--degrade-seed", type=int, default=None,
                   help="degrade GT on the fly when coarse masks are missing")
    p.add_argument("--no-box-channel", action="store_true")
    p.add_argument("--no-mask-channel", action="store_true")
    p.add_argument("--no-ortho", action="store_true")
    p.add_argument("--no-hflip", action="store_true")

    p = sub.add_parser("infer", help="refine every sample of a dataset")
    _add_common(p)
    p.add_argument("--params", type=Path, required=True)
    p.add_argument("--degrade-seed", type=int, default=None)

    p = sub.add_parser("eval", help="score stored predictions against GT")
    _add_common(p)
    p.add_argument("--pred-dir", type=Path, required=True)

    p = sub.add_parser("ablate", help="train/evaluate the channel+enrichment grid")
    _add_common(p)
    p.add_argument("--test-root", type=Path, default=None)
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("serve", help="serve the promptable refinement loop over HTTP")
    _add_common(p)
    p.add_argument("--params", type=Path, required=True)
    p.add_argument("--bind", type=str, default="127.0.0.1:8008")
    p.add_argument("--degrade-seed", type=int, default=None)

    return parser


def _config(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _require(args, name: str):
    value = getattr(args, name, None)
    if value is None:
        raise ValueError(f"--{name.replace('_', '-')} is required for this command")
    return value


def _cmd_synth(args) -> int:
    cfg = _config(args)
    out = _require(args, "out") if args.out else _require(args, "root")
    count = args.count if args.count is not None else cfg["synth"]["count"]
    size = args.size if args.size is not None else cfg["synth"]["size"]
    manifest = generate_synthetic_dataset(out, cfg["seed"], count, size)
    print(f"wrote {len(manifest)} samples to {out}")
    return EXIT_OK


def _cmd_enrich(args) -> int:
    cfg = _config(args)
    root = _require(args, "root")
    out = _require(args, "out")
    min_area = args.min_area if args.min_area is not None else cfg["enrich"]["min_area"]
    conn = args.connectivity if args.connectivity is not None else cfg["enrich"]["connectivity"]
    manifest = enrich_manifest(load_dataset(root), min_area=min_area, connectivity=conn)
    written = write_enriched_root(manifest, out)
    for w in written.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"enriched {root} -> {out}: {len(written)} samples")
    return EXIT_OK if len(written) else EXIT_EMPTY


def _cmd_degrade(args) -> int:
    cfg = _config(args)
    root = _require(args, "root")
    overrides = {
        "dilate_erode_radius": args.radius,
        "boundary_blur_sigma": args.blur_sigma,
        "drop_component_prob": args.drop_prob,
        "spurious_blob_prob": args.blob_prob,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg["degrade"][key] = value
    params = degrade_params_from_config(cfg)
    out = args.out if args.out is not None else Path(root) / "coarse"
    manifest = degrade_manifest(load_dataset(root), params, out_dir=out)
    print(f"wrote {len(manifest)} coarse masks to {out}")
    return EXIT_OK


def _cmd_train_gtenc(args) -> int:
    cfg = _config(args)
    root = _require(args, "root")
    out = _require(args, "out")
    tcfg = train_config_from_config(cfg, iterations=args.iterations)
    params, history = train_gt_encoder(load_dataset(root), tcfg)
    save_params(params, out)
    print(f"gt-encoder: {len(history)} iterations, final bce {history.bce[-1]:.6f} -> {out}")
    return EXIT_OK


def _maybe_degrade_fallback(args, cfg):
    if getattr(args, "degrade_seed", None) is None:
        return None
    return degrade_params_from_config(cfg, seed=args.degrade_seed)


def _cmd_train(args) -> int:
    cfg = _config(args)
    root = _require(args, "root")
    out = _require(args, "out")
    tcfg = train_config_from_config(cfg, iterations=args.iterations)
    tcfg = replace(
        tcfg,
        use_box_channel=tcfg.use_box_channel and not args.no_box_channel,
        use_mask_channel=tcfg.use_mask_channel and not args.no_mask_channel,
        ortho_enabled=tcfg.ortho_enabled and not args.no_ortho,
        hflip_augment=tcfg.hflip_augment and not args.no_hflip,
        degrade_fallback=_maybe_degrade_fallback(args, cfg),
    )
    manifest = load_dataset(root)
    if args.gt_encoder is not None:
        gt_params = load_params(args.gt_encoder)
    else:
        gt_iters = args.gt_iterations or cfg["train"]["gt_encoder_iterations"]
        gt_params, _ = train_gt_encoder(manifest, replace(tcfg, iterations=gt_iters))
    params, history = train_refiner(manifest, gt_params, tcfg)
    save_params(params, out)
    print(f"refiner: {len(history)} iterations, final total {history.total[-1]:.6f} -> {out}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    cfg = _config(args)
    root = _require(args, "root")
    out = _require(args, "out")
    params = load_params(args.params)
    manifest = load_dataset(root)
    predictions = predict_manifest(
        manifest, params, out_dir=out, degrade_fallback=_maybe_degrade_fallback(args, cfg)
    )
    print(f"wrote {len(predictions)} predictions to {out}")
    return EXIT_OK if predictions else EXIT_EMPTY


def _cmd_eval(args) -> int:
    cfg = _config(args)
    root = _require(args, "root")
    out = _require(args, "out")
    metric_cfg = metric_config_from_config(cfg)
    manifest = load_dataset(root)
    if len(manifest) == 0:
        write_report(_empty_report(), out, "csv")
        print("no samples to evaluate", file=sys.stderr)
        return EXIT_EMPTY
    predictions = load_predictions(args.pred_dir, manifest)
    report = evaluate_dataset(predictions, manifest, metric_cfg)
    write_report(report, out, "csv")
    json_out = Path(out).with_suffix(".json")
    write_report(report, json_out, "json")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    agg = report.aggregate
    print(
        f"evaluated {len(report.per_sample)} samples: "
        f"fmax {agg['fmax']:.4f} fw {agg['fw']:.4f} mae {agg['mae']:.4f} "
        f"s {agg['s']:.4f} e {agg['e']:.4f} hce {agg['hce_mean']:.1f}"
    )
    return EXIT_OK


def _empty_report():
    from .dataio import MetricReport

    return MetricReport.from_per_sample({})


def _cmd_ablate(args) -> int:
    cfg = _config(args)
    root = _require(args, "root")
    out = _require(args, "out")
    train_manifest = load_dataset(root)
    if args.test_root is not None:
        test_manifest = load_dataset(args.test_root)
    else:
        train_manifest, test_manifest = split_manifest(
            train_manifest, cfg["ablate"]["test_fraction"]
        )
    iterations = args.iterations if args.iterations is not None else cfg["ablate"]["iterations"]
    tcfg = train_config_from_config(cfg, iterations=iterations)
    rows = run_ablation(
        train_manifest,
        test_manifest,
        tcfg,
        degrade_params_from_config(cfg),
        out_dir=out,
        metric_cfg=metric_config_from_config(cfg),
        min_area=cfg["enrich"]["min_area"],
        gt_encoder_iterations=cfg["train"]["gt_encoder_iterations"],
    )
    for r in rows:
        print(
            f"{r['row']}: enrich={int(r['enrich'])} box={int(r['box'])} mask={int(r['mask'])} "
            f"fmax={r['fmax']:.4f} mae={r['mae']:.4f}"
        )
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .server import serve_http

    cfg = _config(args)
    root = _require(args, "root")
    params = load_params(args.params)
    manifest = load_dataset(root)
    fallback = _maybe_degrade_fallback(args, cfg)
    if fallback is not None:
        manifest = degrade_manifest(manifest, fallback)
    host, _, port = args.bind.rpartition(":")
    server = serve_http(manifest, params, (host or "127.0.0.1", int(port)),
                        metric_config_from_config(cfg))
    print(f"serving {len(manifest)} samples on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "enrich": _cmd_enrich,
    "degrade": _cmd_degrade,
    "train-gtenc": _cmd_train_gtenc,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DisRefineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
