"""Single command-line entry point: synth / stats / validate / train / infer / eval.

Every subcommand takes an optional declarative config file (YAML or JSON)
whose keys mirror the flags; flags override file values, unknown keys are
rejected, and each run writes a resolved-config snapshot next to its
outputs. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__
from .checkpoint import VERSION as CHECKPOINT_VERSION, load_tensors, save_tensors
from .dataset import (
    SceneSpec, VideoAnnotationSet, augment_clip, compute_stats, load_frames, stats_to_csv,
    synthesize, write_dataset,
)
from .detector import ClipSample, Detector, DetectorConfig, TrainSettings, decode_and_nms, train
from .detector.train import META_EPOCH
from .evaluation import EvalResult, SizeBuckets, evaluate
from .mstf import FlowState, LookupConfig


class ConfigError(ValueError):
    pass


class RuntimeFailure(RuntimeError):
    pass


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise RuntimeFailure(f"config file not found: {p}")
    text = p.read_text()
    try:
        if p.suffix in (".yaml", ".yml"):
            import yaml

            raw = yaml.safe_load(text) or {}
        else:
            raw = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"config file {p} does not parse: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {p} must hold a mapping")
    return raw


def _resolve(defaults: dict, file_cfg: dict, overrides: dict) -> dict:
    unknown = sorted(set(file_cfg) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown} (known: {sorted(defaults)})")
    resolved = dict(defaults)
    resolved.update(file_cfg)
    resolved.update({k: v for k, v in overrides.items() if v is not None})
    return resolved


def _write_snapshot(outdir: Path, resolved: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "resolved_config.json").write_text(json.dumps(resolved, sort_keys=True, indent=1) + "\n")


def _parse_ratio(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"split ratio must look like 3:1, got {text!r}")
    return (int(parts[0]), int(parts[1]))


def _as_int_tuple(value) -> tuple:
    if isinstance(value, str):
        value = [v for v in value.replace(",", " ").split() if v]
    return tuple(int(v) for v in value)


# ---------------------------------------------------------------------------
# subcommands

SYNTH_DEFAULTS = {
    "preset": "mixed", "seed": 7, "num_videos": 4, "frames_per_video": 8, "frame_size": 64,
    "objects_per_video": 4, "contrast": None, "camera_speed": None, "camera_jitter": None,
    "moving_fraction": None, "noise": None,
}


def cmd_synth(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    resolved = _resolve(SYNTH_DEFAULTS, file_cfg, {
        "preset": args.preset, "seed": args.seed, "num_videos": args.num_videos,
        "frames_per_video": args.frames_per_video, "frame_size": args.frame_size,
        "objects_per_video": args.objects_per_video,
    })
    overrides = {k: resolved[k] for k in
                 ("num_videos", "frames_per_video", "frame_size", "objects_per_video",
                  "contrast", "camera_speed", "camera_jitter", "moving_fraction", "noise")
                 if resolved[k] is not None}
    spec = SceneSpec.preset(resolved["preset"], **overrides)
    result = synthesize(spec, seed=int(resolved["seed"]))
    outdir = Path(args.out)
    write_dataset(result, outdir)
    _write_snapshot(outdir, resolved)
    print(f"wrote {result.manifest['total_images']} frames, "
          f"{result.manifest['total_annotations']} annotations to {outdir}")
    return 0


STATS_DEFAULTS = {"format": "both", "strict": False}


def cmd_stats(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    resolved = _resolve(STATS_DEFAULTS, file_cfg, {"format": args.format, "strict": args.strict or None})
    ann_path = Path(args.annotations)
    if not ann_path.exists():
        raise RuntimeFailure(f"annotations file not found: {ann_path}")
    ann_set = VideoAnnotationSet.load(ann_path, strict=bool(resolved["strict"]))
    stats = compute_stats(ann_set)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if resolved["format"] in ("json", "both"):
        (outdir / "stats.json").write_text(json.dumps(stats, sort_keys=True, indent=1) + "\n")
    if resolved["format"] in ("csv", "both"):
        (outdir / "stats.csv").write_text(stats_to_csv(stats))
    _write_snapshot(outdir, resolved)
    print(json.dumps({k: stats[k] for k in ("videos", "images", "objects",
                                            "bucket_counts", "median_area",
                                            "mean_objects_per_frame")}, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    ann_path = Path(args.annotations)
    if not ann_path.exists():
        raise RuntimeFailure(f"annotations file not found: {ann_path}")
    ann_set = VideoAnnotationSet.load(ann_path, strict=args.strict)
    warnings = ann_set.load_warnings
    for line in warnings:
        print(f"warning: {line}", file=sys.stderr)
    print(f"{ann_path}: {len(ann_set.videos)} videos, {len(ann_set.images)} images, "
          f"{len(ann_set.annotations)} annotations, {len(warnings)} warnings")
    return 0


TRAIN_DEFAULTS = {
    "epochs": 8, "lr": 5e-3, "momentum": 0.9, "grad_clip": 10.0, "seed": 0,
    "clip_len": 4, "fusion_start_epoch": 4, "split_ratio": "3:1",
    "radii": [4, 4, 4], "flow_iterations": 1, "flow_levels": [8, 16, 32],
    "corr_channels": 64, "input_size": None, "stem_widths": [16, 32],
    "level_widths": [40, 56, 80], "augment": [2.0, 0.2, 1e-4], "use_augment": True,
}


def _clips_from_dataset(ann_set: VideoAnnotationSet, frames: dict, clip_len: int) -> list:
    cats = {c.id: i for i, c in enumerate(ann_set.categories)}
    imgs = ann_set.images_by_id()
    per_frame: dict = {}
    for ann in ann_set.annotations:
        im = imgs[ann.image_id]
        per_frame.setdefault((im.video_id, im.frame_index), []).append(ann)
    clips = []
    for video in ann_set.videos:
        vid_frames = frames.get(video.id, [])
        for start in range(0, len(vid_frames) - clip_len + 1, clip_len):
            fr, bx, cl = [], [], []
            for idx in range(start, start + clip_len):
                anns = per_frame.get((video.id, idx), [])
                fr.append(vid_frames[idx])
                bx.append(np.asarray([a.corners() for a in anns], dtype=np.float64).reshape(-1, 4))
                cl.append(np.asarray([cats[a.category_id] for a in anns], dtype=np.int64))
            clips.append(ClipSample(frames=fr, boxes=bx, classes=cl, video_id=video.id))
    return clips


def build_detector(resolved: dict, num_classes: int, input_size: int, seed: int) -> Detector:
    lookup = LookupConfig(
        radii=_as_int_tuple(resolved["radii"]),
        flow_iterations=int(resolved["flow_iterations"]),
        flow_levels=_as_int_tuple(resolved["flow_levels"]),
        split_ratio=_parse_ratio(resolved["split_ratio"]) if isinstance(resolved["split_ratio"], str)
        else tuple(resolved["split_ratio"]),
        corr_channels=int(resolved["corr_channels"]),
    )
    config = DetectorConfig(
        input_size=input_size,
        stem_widths=_as_int_tuple(resolved["stem_widths"]),
        level_widths=_as_int_tuple(resolved["level_widths"]),
        num_classes=num_classes,
        lookup=lookup,
        fusion_start_epoch=int(resolved["fusion_start_epoch"]),
        augment=tuple(float(v) for v in resolved["augment"]),
    )
    return Detector(config, seed=seed)


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    resolved = _resolve(TRAIN_DEFAULTS, file_cfg, {
        "epochs": args.epochs, "lr": args.lr, "seed": args.seed,
        "fusion_start_epoch": args.fusion_epoch, "split_ratio": args.split_ratio,
    })
    data_dir = Path(args.data)
    ann_path = data_dir / "annotations.json"
    if not ann_path.exists():
        raise RuntimeFailure(f"annotations file not found: {ann_path}")
    ann_set = VideoAnnotationSet.load(ann_path)
    frames = load_frames(ann_set, data_dir)
    input_size = resolved["input_size"] or ann_set.videos[0].width
    clips = _clips_from_dataset(ann_set, frames, int(resolved["clip_len"]))
    if not clips:
        raise RuntimeFailure("dataset yielded no training clips")

    detector = build_detector(resolved, len(ann_set.categories), int(input_size), int(resolved["seed"]))
    settings = TrainSettings(epochs=int(resolved["epochs"]), lr=float(resolved["lr"]),
                             momentum=float(resolved["momentum"]), grad_clip=float(resolved["grad_clip"]),
                             seed=int(resolved["seed"]), augment=bool(resolved["use_augment"]))

    start_epoch = 0
    resume_state = None
    if args.resume:
        tensors, _ = load_tensors(args.resume)
        detector.load_named({k: v for k, v in tensors.items() if k in detector.named_parameters()})
        start_epoch = int(tensors.get(META_EPOCH, np.zeros(1))[0])
        resume_state = tensors

    aug_params = tuple(float(v) for v in resolved["augment"])

    def augment_fn(fr, bx, cl, rng):
        return augment_clip(fr, bx, cl, aug_params, rng)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_snapshot(outdir, resolved)
    (outdir / "model_config.json").write_text(json.dumps({
        "num_classes": len(ann_set.categories), "input_size": int(input_size),
        **{k: resolved[k] for k in ("stem_widths", "level_widths", "radii", "flow_iterations",
                                    "flow_levels", "corr_channels", "split_ratio",
                                    "fusion_start_epoch", "augment")},
    }, sort_keys=True, indent=1) + "\n")

    log_path = outdir / "metrics.jsonl"
    result = train(detector, clips, settings, augment_fn=augment_fn if settings.augment else None,
                   start_epoch=start_epoch, resume_state=resume_state)
    with open(log_path, "a" if args.resume else "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    save_tensors(result.state_tensors(detector), outdir / "checkpoint.fdck")
    if result.aborted:
        raise RuntimeFailure("training aborted on non-finite loss; last good checkpoint kept")
    print(f"trained {result.epochs_done} epochs over {len(clips)} clips -> {outdir / 'checkpoint.fdck'}")
    return 0


INFER_DEFAULTS = {"score_threshold": 0.25, "iou_threshold": 0.5, "reset_per_video": True}


def cmd_infer(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    resolved = _resolve(INFER_DEFAULTS, file_cfg, {
        "score_threshold": args.score_threshold, "iou_threshold": args.iou_threshold,
    })
    model_dir = Path(args.model)
    ckpt_path = model_dir / "checkpoint.fdck"
    cfg_path = model_dir / "model_config.json"
    for p in (ckpt_path, cfg_path):
        if not p.exists():
            raise RuntimeFailure(f"model file not found: {p}")
    model_cfg = json.loads(cfg_path.read_text())
    data_dir = Path(args.data)
    ann_path = data_dir / "annotations.json"
    if not ann_path.exists():
        raise RuntimeFailure(f"annotations file not found: {ann_path}")
    ann_set = VideoAnnotationSet.load(ann_path)
    frames = load_frames(ann_set, data_dir)

    merged = dict(TRAIN_DEFAULTS)
    merged.update({k: model_cfg[k] for k in model_cfg if k in merged})
    detector = build_detector(merged, int(model_cfg["num_classes"]), int(model_cfg["input_size"]), seed=0)
    tensors, _ = load_tensors(ckpt_path)
    detector.load_named({k: v for k, v in tensors.items() if k in detector.named_parameters()})

    predictions, latencies = run_inference(
        detector, ann_set, frames, float(resolved["score_threshold"]), float(resolved["iou_threshold"]),
        reset_per_video=bool(resolved["reset_per_video"]))

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_snapshot(outdir, resolved)
    (outdir / "predictions.json").write_text(json.dumps(predictions, sort_keys=True, indent=1) + "\n")
    lat = np.asarray(latencies)
    (outdir / "latency.json").write_text(json.dumps({
        "frames": len(latencies),
        "mean_ms": float(lat.mean()) if len(lat) else None,
        "median_ms": float(np.median(lat)) if len(lat) else None,
        "p95_ms": float(np.percentile(lat, 95)) if len(lat) else None,
    }, sort_keys=True, indent=1) + "\n")
    print(f"wrote {len(predictions)} predictions for {len(latencies)} frames to {outdir}")
    return 0


def run_inference(detector, ann_set, frames, score_threshold, iou_threshold, reset_per_video=True):
    """Streaming per-video inference; returns (prediction records, per-frame ms)."""
    from .numerics.tensor import no_grad

    predictions = []
    latencies = []
    state = FlowState.initial()
    for video in ann_set.videos:
        if reset_per_video:
            state = FlowState.initial()
        for frame_index, frame in enumerate(frames.get(video.id, [])):
            started = time.perf_counter()
            with no_grad():
                preds, state, _ = detector.forward_frame(frame, state, fuse=True)
                dets = decode_and_nms(preds, score_threshold, iou_threshold,
                                      detector.config.input_size, frame_index=frame_index)
            latencies.append((time.perf_counter() - started) * 1e3)
            for d in dets:
                x1, y1, x2, y2 = d.box
                predictions.append({
                    "video_id": video.id, "frame_index": frame_index,
                    "category_id": int(ann_set.categories[d.category_id].id),
                    "bbox": [x1, y1, x2 - x1, y2 - y1], "score": d.score,
                })
    return predictions, latencies


EVAL_DEFAULTS = {"ignore_overlap": "iof", "area_filter_mode": "coco"}


def cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    resolved = _resolve(EVAL_DEFAULTS, file_cfg, {
        "ignore_overlap": args.ignore_overlap, "area_filter_mode": args.area_filter_mode,
    })
    pred_path = Path(args.predictions)
    ann_path = Path(args.annotations)
    if not pred_path.exists():
        raise RuntimeFailure(f"prediction file not found: {pred_path}")
    if not ann_path.exists():
        raise RuntimeFailure(f"annotations file not found: {ann_path}")
    ann_set = VideoAnnotationSet.load(ann_path)
    raw = json.loads(pred_path.read_text())
    predictions = [
        (int(r["video_id"]), int(r["frame_index"]), int(r["category_id"]),
         (float(r["bbox"][0]), float(r["bbox"][1]),
          float(r["bbox"][0]) + float(r["bbox"][2]), float(r["bbox"][1]) + float(r["bbox"][3])),
         float(r["score"]))
        for r in raw
    ]
    result = evaluate(predictions, ann_set.eval_frames(), ann_set.scoreable_category_ids(),
                      ignore_overlap=resolved["ignore_overlap"],
                      area_filter_mode=resolved["area_filter_mode"])
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_snapshot(outdir, resolved)
    (outdir / "eval.json").write_text(result.to_json())
    (outdir / "eval.txt").write_text(result.table() + "\n")
    print(result.table())
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowdet", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"flowdet {__version__} (schema v{FORMAT_VERSION}, "
                                f"checkpoint v{CHECKPOINT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic video dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--preset", choices=("mixed", "es-only", "static", "degraded"))
    p.add_argument("--seed", type=int)
    p.add_argument("--num-videos", type=int, dest="num_videos")
    p.add_argument("--frames-per-video", type=int, dest="frames_per_video")
    p.add_argument("--frame-size", type=int, dest="frame_size")
    p.add_argument("--objects-per-video", type=int, dest="objects_per_video")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset statistics report")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--format", choices=("json", "csv", "both"))
    p.add_argument("--strict", action="store_true", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("validate", help="schema/invariant validation")
    p.add_argument("--annotations", required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train a detector on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--fusion-epoch", type=int, dest="fusion_epoch")
    p.add_argument("--split-ratio", dest="split_ratio")
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="streaming inference over a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--score-threshold", type=float, dest="score_threshold")
    p.add_argument("--iou-threshold", type=float, dest="iou_threshold")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against annotations")
    p.add_argument("--predictions", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--ignore-overlap", choices=("iof", "iou"), dest="ignore_overlap")
    p.add_argument("--area-filter-mode", choices=("coco", "hard"), dest="area_filter_mode")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeFailure, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
