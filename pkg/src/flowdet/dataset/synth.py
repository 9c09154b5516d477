"""Synthetic small-object video generator with exact ground truth.

Videos show low-contrast rectangular sprites drifting over a procedurally
textured background, optionally under camera pan/jitter. Sprite colours are
offsets from the local background scaled by ``contrast``, so a
texture-degraded variant (contrast toward zero) makes objects nearly
invisible in any single frame while their motion remains informative.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..evaluation import SizeBuckets
from .schema import BoxAnnotation, Category, FrameImage, VideoAnnotationSet, VideoInfo

BUCKET_SIDES = {"es": (4.0, 11.5), "rs": (12.0, 19.5), "gs": (20.0, 31.5)}


@dataclass(frozen=True)
class SceneSpec:
    name: str = "mixed"
    num_videos: int = 4
    frames_per_video: int = 8
    frame_size: int = 64
    objects_per_video: int = 4
    size_mix: tuple = (("es", 0.7), ("rs", 0.3))
    speed_range: tuple = (0.5, 1.5)
    moving_fraction: float = 1.0
    camera_speed: float = 0.0
    camera_jitter: float = 0.0
    contrast: float = 1.0
    background_cell: int = 8     # texture patch size in px
    noise: float = 0.01
    distractors_per_video: int = 0  # static unannotated texture anomalies
    categories: tuple = ("person",)

    @classmethod
    def preset(cls, name: str, **overrides) -> "SceneSpec":
        presets = {
            "mixed": dict(),
            "es-only": dict(size_mix=(("es", 1.0),)),
            "static": dict(moving_fraction=0.0, speed_range=(0.0, 0.0)),
            "degraded": dict(contrast=0.45),
        }
        if name not in presets:
            raise ValueError(f"unknown scene preset {name!r} (choose from {sorted(presets)})")
        merged = {**presets[name], "name": name, **overrides}
        return cls(**merged)


@dataclass
class SynthResult:
    ann_set: VideoAnnotationSet
    frames: dict                   # video_id -> list of (H, W, 3) float arrays
    manifest: dict

    def clip_ground_truth(self):
        """video_id -> per-frame (boxes xyxy array, class-index array)."""
        cats = {c.id: i for i, c in enumerate(self.ann_set.categories)}
        imgs = self.ann_set.images_by_id()
        out = {v.id: [([], []) for _ in range(v.num_frames)] for v in self.ann_set.videos}
        for ann in self.ann_set.annotations:
            im = imgs[ann.image_id]
            boxes, classes = out[im.video_id][im.frame_index]
            boxes.append(ann.corners())
            classes.append(cats[ann.category_id])
        return {
            vid: [(np.asarray(b, dtype=np.float64).reshape(-1, 4), np.asarray(c, dtype=np.int64))
                  for b, c in rows]
            for vid, rows in out.items()
        }


def _background(rng: np.random.Generator, size: int, cell: int) -> np.ndarray:
    coarse = rng.uniform(0.35, 0.65, size=(size // cell + 2, size // cell + 2, 3))
    ys = np.linspace(0, coarse.shape[0] - 1.001, size)
    xs = np.linspace(0, coarse.shape[1] - 1.001, size)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    tex = (coarse[y0][:, x0] * (1 - fx) * (1 - fy) + coarse[y0][:, x0 + 1] * fx * (1 - fy)
           + coarse[y0 + 1][:, x0] * (1 - fx) * fy + coarse[y0 + 1][:, x0 + 1] * fx * fy)
    fine = rng.uniform(-0.04, 0.04, size=(size, size, 3))
    return np.clip(tex + fine, 0.0, 1.0)


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Per-cell overlap of [lo, hi] with unit pixel cells (subpixel boxes)."""
    edges = np.arange(n + 1, dtype=np.float64)
    return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, 1.0)


@dataclass
class _Sprite:
    track_id: int
    category_index: int
    w: float
    h: float
    pos: np.ndarray       # canvas-centre (x, y)
    vel: np.ndarray
    color_delta: np.ndarray
    moving: bool


def _sample_sprites(spec: SceneSpec, rng: np.random.Generator, canvas: int, margin: int) -> list:
    names = [name for name, _ in spec.size_mix]
    weights = np.asarray([w for _, w in spec.size_mix], dtype=np.float64)
    weights /= weights.sum()
    sprites = []
    for idx in range(spec.objects_per_video):
        bucket = names[rng.choice(len(names), p=weights)]
        lo, hi = BUCKET_SIDES[bucket]
        side = rng.uniform(lo, hi)
        ratio = rng.uniform(0.85, 1.18)
        w, h = max(side * ratio, 2.0), max(side / ratio, 2.0)
        moving = bool(rng.random() < spec.moving_fraction)
        speed = rng.uniform(*spec.speed_range) if moving else 0.0
        angle = rng.uniform(0.0, 2 * np.pi)
        # signed colour offset, clearly away from zero so contrast scales it
        delta = rng.uniform(0.18, 0.4, size=3) * rng.choice([-1.0, 1.0], size=3)
        pos = rng.uniform(margin + 2, canvas - margin - 2, size=2)
        sprites.append(_Sprite(
            track_id=idx + 1,
            category_index=int(rng.integers(len(spec.categories))),
            w=w, h=h, pos=pos,
            vel=np.array([np.cos(angle), np.sin(angle)]) * speed,
            color_delta=delta, moving=moving))
    return sprites


def synthesize(spec: SceneSpec, seed: int = 0, render: bool = True) -> SynthResult:
    """Generate videos, exact annotations, and a per-bucket manifest."""
    rng = np.random.default_rng(seed)
    buckets = SizeBuckets.default()
    categories = [Category(id=i + 1, name=name) for i, name in enumerate(spec.categories)]
    ann_set = VideoAnnotationSet(categories=categories)
    frames_out: dict = {}
    next_image = 1
    next_ann = 1

    margin = int(np.ceil(spec.camera_speed * spec.frames_per_video + 3 * spec.camera_jitter)) + 6
    canvas = spec.frame_size + 2 * margin

    for video_idx in range(spec.num_videos):
        video_id = video_idx + 1
        ann_set.videos.append(VideoInfo(id=video_id, name=f"synth_{spec.name}_{video_idx:03d}",
                                        width=spec.frame_size, height=spec.frame_size,
                                        num_frames=spec.frames_per_video))
        background = _background(rng, canvas, spec.background_cell)
        sprites = _sample_sprites(spec, rng, canvas, margin)
        # distractors share the sprite colour mechanics but never move and are
        # not annotated: background confusion that only motion can resolve
        for _ in range(spec.distractors_per_video):
            lo, hi = BUCKET_SIDES[rng.choice([name for name, _ in spec.size_mix])]
            side = rng.uniform(lo, hi)
            ratio = rng.uniform(0.85, 1.18)
            w, h = max(side * ratio, 2.0), max(side / ratio, 2.0)
            delta = rng.uniform(0.18, 0.4, size=3) * rng.choice([-1.0, 1.0], size=3)
            pos = rng.uniform(margin + 2, canvas - margin - 2, size=2)
            x1, y1 = pos[0] - w / 2, pos[1] - h / 2
            cov = np.outer(_coverage(y1, y1 + h, canvas), _coverage(x1, x1 + w, canvas))
            background = np.clip(background + cov[..., None] * (spec.contrast * delta), 0.0, 1.0)
        pan_angle = rng.uniform(0.0, 2 * np.pi)
        pan = np.array([np.cos(pan_angle), np.sin(pan_angle)]) * spec.camera_speed
        cam = np.array([margin, margin], dtype=np.float64)
        video_frames = []

        for frame_idx in range(spec.frames_per_video):
            offset = cam + pan * frame_idx
            if spec.camera_jitter:
                offset = offset + rng.normal(0.0, spec.camera_jitter, size=2)
            offset = np.clip(offset, 0, canvas - spec.frame_size)

            image = FrameImage(id=next_image, video_id=video_id, frame_index=frame_idx,
                               file_name=f"{ann_set.videos[-1].name}/{frame_idx:06d}.png")
            next_image += 1
            ann_set.images.append(image)

            if render:
                frame = background[int(round(offset[1])):int(round(offset[1])) + spec.frame_size,
                                   int(round(offset[0])):int(round(offset[0])) + spec.frame_size].copy()
            for sprite in sprites:
                centre = sprite.pos + sprite.vel * frame_idx
                x1 = centre[0] - sprite.w / 2 - offset[0]
                y1 = centre[1] - sprite.h / 2 - offset[1]
                x2, y2 = x1 + sprite.w, y1 + sprite.h
                if render:
                    cov = np.outer(_coverage(y1, y2, spec.frame_size),
                                   _coverage(x1, x2, spec.frame_size))
                    if cov.any():
                        frame = frame + cov[..., None] * (spec.contrast * sprite.color_delta)
                cx1, cy1 = max(x1, 0.0), max(y1, 0.0)
                cx2, cy2 = min(x2, float(spec.frame_size)), min(y2, float(spec.frame_size))
                vis_w, vis_h = cx2 - cx1, cy2 - cy1
                if vis_w < 1.0 or vis_h < 1.0:
                    continue
                if vis_w * vis_h < 0.25 * sprite.w * sprite.h:
                    continue
                ann_set.annotations.append(BoxAnnotation(
                    id=next_ann, image_id=image.id, track_id=sprite.track_id,
                    category_id=categories[sprite.category_index].id,
                    bbox=(round(cx1, 3), round(cy1, 3), round(vis_w, 3), round(vis_h, 3)),
                    area=round(vis_w, 3) * round(vis_h, 3), is_moving=sprite.moving))
                next_ann += 1
            if render:
                if spec.noise:
                    frame = frame + rng.normal(0.0, spec.noise, size=frame.shape)
                video_frames.append(np.clip(frame, 0.0, 1.0).astype(np.float32))
        if render:
            frames_out[video_id] = video_frames

    per_bucket = {name: 0 for name in buckets.names}
    per_category = {c.name: 0 for c in categories}
    moving = 0
    for ann in ann_set.annotations:
        per_bucket[buckets.bucket_of(ann.area)] += 1
        per_category[ann_set.category_by_id()[ann.category_id].name] += 1
        moving += int(ann.is_moving)
    manifest = {
        "seed": seed,
        "spec": asdict(spec),
        "total_videos": spec.num_videos,
        "total_images": len(ann_set.images),
        "total_annotations": len(ann_set.annotations),
        "per_bucket": per_bucket,
        "per_category": per_category,
        "moving_annotations": moving,
    }
    return SynthResult(ann_set=ann_set, frames=frames_out, manifest=manifest)


def write_dataset(result: SynthResult, outdir) -> None:
    """annotations.json + manifest.json + per-video PNG frame directories."""
    from PIL import Image

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result.ann_set.save(outdir / "annotations.json")
    (outdir / "manifest.json").write_text(json.dumps(result.manifest, sort_keys=True, indent=1) + "\n")
    videos = result.ann_set.videos_by_id()
    for video_id, frames in result.frames.items():
        vdir = outdir / "frames" / videos[video_id].name
        vdir.mkdir(parents=True, exist_ok=True)
        for idx, frame in enumerate(frames):
            Image.fromarray((np.clip(frame, 0, 1) * 255).astype(np.uint8)).save(vdir / f"{idx:06d}.png")


def load_frames(ann_set: VideoAnnotationSet, root) -> dict:
    """Read per-video PNG directories back into float arrays."""
    from PIL import Image

    root = Path(root)
    out: dict = {}
    for im in sorted(ann_set.images, key=lambda r: (r.video_id, r.frame_index)):
        arr = np.asarray(Image.open(root / "frames" / im.file_name)).astype(np.float32) / 255.0
        out.setdefault(im.video_id, []).append(arr)
    return out
