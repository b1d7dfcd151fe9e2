"""Command-line entry point.

One executable, one subcommand per pipeline stage::

    safer features | train | eval | ablate | explain | feature-maps |
          mask-augment | curate consensus | curate frames |
          audit bias | audit balance | serve-annotation | split

Config precedence: built-in defaults < JSON config file (--config or the
SAFER_CONFIG environment variable) < command-line flags. Operational
failures exit 1 with a structured message; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .backbones import build_backbone, export_feature_maps
from .config import PipelineConfig
from .context import get_scene_backend
from .curation import AnnotationStore, bias_audit, consensus_all, extract_frames
from .detectors import get_detector
from .errors import SaferError
from .explain import face_evidence, load_baseline, neutral_baseline, render
from .fusion import (
    StreamMask,
    checkpoint_mask,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .imaging import load_image, resize, save_image
from .manifest import balance_report, load_manifest, save_manifest
from .masking import MaskStyle, build_masked_manifest
from .pipeline import (
    ImageFeaturePipeline,
    PrecomputedPipeline,
    extract_bundles,
    load_features,
    save_features,
)
from .training import ablation_run, evaluate, split_dataset, train

logger = logging.getLogger(__name__)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="JSON config file (default: $SAFER_CONFIG if set)")
    p.add_argument("--seed", type=int, default=None, help="override config seed")


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--detector", default="fixture",
                   help="face detection backend name (default: fixture)")
    p.add_argument("--scene-backend", choices=("stub", "fixture"), default="stub",
                   help="scene classification backend (default: stub)")
    p.add_argument("--scene-table", type=Path, default=None,
                   help="JSON table for the fixture scene backend")
    p.add_argument("--backbone-weights", type=Path, default=None,
                   help="weights file for the residual transfer backbone")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel feature-extraction workers (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safer",
        description="Situation-aware facial emotion recognition pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("features", help="extract feature bundles to a feature file")
    _add_config_args(p)
    _add_pipeline_args(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output .npz feature file")
    p.add_argument("--augment", action="store_true",
                   help="apply training-time augmentation to train-split crops")

    p = sub.add_parser("train", help="train the fusion classifier")
    _add_config_args(p)
    _add_pipeline_args(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--mask", default=None,
                   help="stream mask, e.g. F, FB, FBP "
                        "(default: config stream_mask_default)")
    p.add_argument("--features", type=Path, default=None,
                   help="reuse a precomputed .npz feature file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--augment", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    _add_config_args(p)
    _add_pipeline_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--features", type=Path, default=None)
    p.add_argument("--mask", default=None,
                   help="stream mask (default: the mask stored in the checkpoint)")

    p = sub.add_parser("ablate", help="train and evaluate one model per stream mask")
    _add_config_args(p)
    _add_pipeline_args(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--masks", default="F,FB,FP,FBP",
                   help="comma-separated stream masks (default: F,FB,FP,FBP)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--features", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("explain", help="emit explanations for a manifest split")
    _add_config_args(p)
    _add_pipeline_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--baseline", type=Path, default=None,
                   help="JSON visible-feature baseline (default: computed from "
                        "Neutral train samples)")

    p = sub.add_parser("feature-maps", help="export per-layer activation maps")
    _add_config_args(p)
    _add_pipeline_args(p)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--id", dest="sample_id", default=None,
                   help="record id within --manifest")
    p.add_argument("--image", type=Path, default=None,
                   help="standalone image instead of a manifest record")
    p.add_argument("--layers", default="1",
                   help="comma-separated layer ids (1-based) or conv names")
    p.add_argument("--channels", default=None,
                   help="comma-separated channel indices (default: all)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("mask-augment", help="build a masked-variant dataset")
    _add_config_args(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--color", default="0.25,0.55,0.85",
                   help="mask fill color r,g,b in [0,1]")
    p.add_argument("--margin", type=float, default=0.08,
                   help="hull padding as a fraction of inter-ocular distance")

    curate = sub.add_parser("curate", help="dataset curation tools")
    curate_sub = curate.add_subparsers(dest="curate_command", required=True,
                                       metavar="SUBCOMMAND")

    p = curate_sub.add_parser("consensus", help="aggregate annotation events")
    p.add_argument("--store", type=Path, required=True,
                   help="annotation event log (JSON-Lines)")
    p.add_argument("--min-agreement", type=int, default=4)
    p.add_argument("--irrelevant-quorum", type=int, default=4)
    p.add_argument("--out", type=Path, required=True,
                   help="output consensus JSON-Lines file")

    p = curate_sub.add_parser("frames", help="extract frames from a video")
    p.add_argument("--video", type=Path, required=True)
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    audit = sub.add_parser("audit", help="dataset audits")
    audit_sub = audit.add_subparsers(dest="audit_command", required=True,
                                     metavar="SUBCOMMAND")

    p = audit_sub.add_parser("bias", help="demographic representation audit")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = audit_sub.add_parser("balance", help="class balance report")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None,
                   help="optional CSV output path")

    p = sub.add_parser("serve-annotation", help="run the annotation HTTP service")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--min-agreement", type=int, default=4)
    p.add_argument("--irrelevant-quorum", type=int, default=4)
    p.add_argument("--ui", type=Path, default=None,
                   help="serve the built browser UI from this directory "
                        "(e.g. frontend/ after `npm run build`)")

    p = sub.add_parser("split", help="assign stratified train/val/test splits")
    _add_config_args(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output manifest path")
    p.add_argument("--ratios", default=None,
                   help="comma-separated ratios (default: config split_ratios)")

    return parser


def _load_config(args) -> PipelineConfig:
    path = getattr(args, "config", None)
    if path is None:
        env = os.environ.get("SAFER_CONFIG")
        path = Path(env) if env else None
    config = PipelineConfig.load(path) if path else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        config.epochs = args.epochs
    if getattr(args, "batch_size", None) is not None:
        config.batch_size = args.batch_size
    config.validate()
    return config


def _build_pipeline(args, config, manifest):
    if getattr(args, "features", None):
        return PrecomputedPipeline(load_features(args.features))
    detector = get_detector(args.detector)
    scene = get_scene_backend(args.scene_backend, config,
                              table_path=args.scene_table)
    rng = np.random.default_rng(config.seed)
    face_backbone = build_backbone(config, rng, weights_path=args.backbone_weights)
    return ImageFeaturePipeline(
        config, manifest, detector, scene,
        face_backbone=face_backbone,
        augment_train=bool(getattr(args, "augment", False)),
    )


def _cmd_features(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    pipeline = _build_pipeline(args, config, manifest)
    bundles = extract_bundles(pipeline, list(manifest.records), workers=args.workers)
    path = save_features(args.out, manifest, bundles)
    print(f"wrote {len(bundles)} feature bundles to {path}")
    return 0


def _default_mask(config: PipelineConfig) -> StreamMask:
    face, background, place = config.stream_mask_default
    return StreamMask(face=face, background=background, place=place)


def _cmd_train(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    pipeline = _build_pipeline(args, config, manifest)
    mask = StreamMask.parse(args.mask) if args.mask else _default_mask(config)
    params, history = train(config, manifest, pipeline, mask, workers=args.workers)
    out = Path(args.out)
    ckpt = save_checkpoint(out / "checkpoint.ckpt", params, config, mask)
    (out / "history.json").write_text(json.dumps({
        "seed": history.seed,
        "best_epoch": history.best_epoch,
        "best_val_accuracy": history.best_val_accuracy,
        "epochs": [
            {"train_loss": e.train_loss, "val_accuracy": e.val_accuracy, "lr": e.lr}
            for e in history.epochs
        ],
    }, indent=2))
    print(f"trained {mask.label()} for {len(history.epochs)} epochs; "
          f"best val accuracy {history.best_val_accuracy:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args)
    params, header = load_checkpoint(args.checkpoint)
    mask = StreamMask.parse(args.mask) if args.mask else checkpoint_mask(header)
    manifest = load_manifest(args.manifest)
    pipeline = _build_pipeline(args, config, manifest)
    accuracy, cm = evaluate(params, manifest, args.split, pipeline, mask,
                            workers=args.workers)
    out = Path(args.out)
    csv_path = cm.to_csv(out / "confusion.csv")
    png_path = cm.to_png(out / "confusion.png")
    print(f"accuracy: {accuracy:.4f} ({cm.correct}/{cm.total}) on split "
          f"{args.split!r} with mask {mask.label()}")
    print(f"confusion matrix: {csv_path}")
    print(f"heat map: {png_path}")
    return 0


def _cmd_ablate(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    pipeline = _build_pipeline(args, config, manifest)
    masks = [StreamMask.parse(m) for m in args.masks.split(",") if m]
    report = ablation_run(config, manifest, pipeline, masks,
                          eval_split=args.split, workers=args.workers)
    path = report.to_csv(Path(args.out) / "ablation.csv")
    for mask, acc in report.rows:
        print(f"{mask.label():>6}: {acc:.4f}")
    print(f"report: {path}")
    return 0


def _cmd_explain(args) -> int:
    config = _load_config(args)
    params, header = load_checkpoint(args.checkpoint)
    mask = checkpoint_mask(header)
    manifest = load_manifest(args.manifest)
    pipeline = _build_pipeline(args, config, manifest)
    if args.baseline:
        baseline = load_baseline(args.baseline)
    else:
        baseline = neutral_baseline(manifest, pipeline)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = [r for r in manifest.split_records(args.split) if r.label is not None]
    lines = []
    for rec in records:
        bundle = pipeline.bundle(rec)
        label, probs = predict(params, bundle, mask)
        evidence = face_evidence(bundle.visible, baseline,
                                 threshold=config.evidence_threshold)
        explanation = render(label, evidence, bundle.place_info)
        lines.append(json.dumps({
            "sample_id": rec.id,
            "emotion": label.display_name,
            "probabilities": [float(p) for p in probs],
            "evidence": list(explanation.face_evidence),
            "place": bundle.place_info.to_json_dict(),
            "rendered": explanation.rendered,
        }))
    path = out / "explanations.jsonl"
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} explanations to {path}")
    return 0


def _cmd_feature_maps(args) -> int:
    config = _load_config(args)
    rng = np.random.default_rng(config.seed)
    backbone = build_backbone(config, rng, weights_path=args.backbone_weights)
    if args.image is not None:
        image = resize(load_image(args.image), config.image_size)
        sample_id = args.sample_id or Path(args.image).stem
    elif args.manifest is not None and args.sample_id:
        manifest = load_manifest(args.manifest)
        record = manifest.by_id(args.sample_id)
        pipeline = _build_pipeline(args, config, manifest)
        image = pipeline.face_crop_for(record)
        sample_id = record.id
    else:
        raise SaferError("feature-maps needs --image or (--manifest and --id)")
    layer_ids = [int(t) if t.isdigit() else t for t in args.layers.split(",") if t]
    channels = ([int(c) for c in args.channels.split(",")]
                if args.channels else None)
    written = export_feature_maps(backbone, image, layer_ids, args.out, sample_id,
                                  channels=channels)
    print(f"wrote {len(written)} feature maps to {args.out}")
    return 0


def _cmd_mask_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    color = tuple(float(c) for c in args.color.split(","))
    if len(color) != 3:
        raise SaferError(f"--color needs r,g,b; got {args.color!r}")
    style = MaskStyle(color=color, margin=args.margin)
    masked = build_masked_manifest(manifest, style, args.out)
    skipped = len(manifest.records) - len(masked.records)
    print(f"masked {len(masked.records)} of {len(manifest.records)} records "
          f"({skipped} skipped) into {args.out}")
    return 0


def _cmd_curate_consensus(args) -> int:
    store = AnnotationStore(args.store)
    results = consensus_all(store, args.min_agreement, args.irrelevant_quorum)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(json.dumps(r.to_json_dict()) for r in results) + "\n")
    kept = sum(1 for r in results if r.decision == "keep")
    print(f"{len(results)} images judged; {kept} kept -> {out}")
    return 0


def _cmd_curate_frames(args) -> int:
    frames = extract_frames(args.video, fps=args.fps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = []
    for k, frame in enumerate(frames):
        rel = f"frame_{k:05d}.png"
        save_image(out / rel, frame.image)
        provenance.append(json.dumps({
            "source": frame.source,
            "frame_index": frame.frame_index,
            "timestamp": frame.timestamp,
            "path": rel,
        }))
    (out / "frames.jsonl").write_text("\n".join(provenance) + "\n")
    print(f"extracted {len(frames)} frames at {args.fps} FPS to {out}")
    return 0


def _cmd_audit_bias(args) -> int:
    manifest = load_manifest(args.manifest)
    report = bias_audit(manifest)
    out = Path(args.out)
    csv_path = report.to_csv(out / "bias.csv")
    (out / "bias.json").write_text(json.dumps(report.to_json_dict(), indent=2))
    print(f"bias audit over tags {sorted(report.counts)} -> {csv_path}")
    return 0


def _cmd_audit_balance(args) -> int:
    manifest = load_manifest(args.manifest)
    report = balance_report(manifest)
    for name, count in report.rows():
        print(f"{name:>10}: {count}")
    print(f"imbalance ratio: {report.imbalance_ratio:.2f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        lines = ["class,count"] + [f"{n},{c}" for n, c in report.rows()]
        lines.append(f"imbalance_ratio,{report.imbalance_ratio:.6f}")
        out.write_text("\n".join(lines) + "\n")
        print(f"report: {out}")
    return 0


def _cmd_serve_annotation(args) -> int:
    from .service import serve

    manifest = load_manifest(args.manifest)
    serve(manifest, args.store, host=args.host, port=args.port,
          min_agreement=args.min_agreement,
          irrelevant_quorum=args.irrelevant_quorum,
          ui_dir=args.ui)
    return 0


def _cmd_split(args) -> int:
    config = _load_config(args)
    manifest = load_manifest(args.manifest)
    if args.ratios:
        parts = tuple(float(x) for x in args.ratios.split(","))
        if len(parts) != 3:
            raise SaferError(f"--ratios needs three values, got {args.ratios!r}")
        ratios = parts
    else:
        ratios = config.split_ratios
    out_manifest = split_dataset(manifest, ratios, config.seed)
    path = save_manifest(out_manifest, args.out)
    counts = {s: len(out_manifest.split_records(s)) for s in ("train", "val", "test")}
    print(f"split {counts['train']}/{counts['val']}/{counts['test']} -> {path}")
    return 0


_HANDLERS = {
    "features": _cmd_features,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "explain": _cmd_explain,
    "feature-maps": _cmd_feature_maps,
    "mask-augment": _cmd_mask_augment,
    "serve-annotation": _cmd_serve_annotation,
    "split": _cmd_split,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "curate":
        handler = {"consensus": _cmd_curate_consensus,
                   "frames": _cmd_curate_frames}[args.curate_command]
    elif args.command == "audit":
        handler = {"bias": _cmd_audit_bias,
                   "balance": _cmd_audit_balance}[args.audit_command]
    else:
        handler = _HANDLERS[args.command]
    return handler(args)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        return run(argv)
    except SaferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
