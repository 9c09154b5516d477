"""Annotation tooling: tiling/downsampling, keyframe interpolation,
clip-consistent geometric augmentation, movement-interval merging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .schema import BoxAnnotation, FrameImage, ValidationError, VideoAnnotationSet, VideoInfo


def round_half_up(value: float, decimals: int = 0) -> float:
    factor = 10.0 ** decimals
    return math.floor(value * factor + 0.5) / factor


# ---------------------------------------------------------------------------
# tiling + downsampling

@dataclass
class TileSpec:
    crop_size: int | None = None   # None -> input height (square crops)
    out_size: int = 1024
    keep_fraction: float = 0.25    # clipped boxes below this share are dropped
    round_decimals: int = 2        # half-up rounding granularity for box coords


@dataclass
class TileResult:
    ann_set: VideoAnnotationSet
    frames: dict = field(default_factory=dict)   # video_id -> list of arrays
    source_map: dict = field(default_factory=dict)  # new ann id -> (src ann id, x_off, scale)
    warnings: list = field(default_factory=list)


def _resize_frame(frame: np.ndarray, out_size: int) -> np.ndarray:
    from PIL import Image

    img = Image.fromarray((np.clip(frame, 0.0, 1.0) * 255).astype(np.uint8))
    img = img.resize((out_size, out_size), Image.BILINEAR)
    return np.asarray(img).astype(np.float32) / 255.0


def tile_and_downsample(ann_set: VideoAnnotationSet, spec: TileSpec | None = None,
                        frames: dict | None = None) -> TileResult:
    """Split every video into left/right square crops, then downsample.

    The left crop spans x in [0, crop), the right crop x in [W-crop, W);
    boxes are clipped to their crop and dropped when the clipped area falls
    below ``keep_fraction`` of the original, then scaled by out/crop with
    half-up rounding at ``round_decimals``.
    """
    spec = spec or TileSpec()
    result = TileResult(ann_set=VideoAnnotationSet(categories=list(ann_set.categories)))
    imgs = ann_set.images_by_id()
    anns_by_image = ann_set.annotations_by_image()

    next_video = 1
    next_image = 1
    next_ann = 1
    for video in ann_set.videos:
        crop = spec.crop_size or video.height
        if video.width < crop:
            result.warnings.append(
                f"video {video.id}: width {video.width} below crop size {crop}, single centred crop")
            offsets = [("c", max((video.width - crop) // 2, 0))]
        else:
            offsets = [("l", 0), ("r", video.width - crop)]
        scale = spec.out_size / crop
        for suffix, x_off in offsets:
            new_vid = next_video
            next_video += 1
            result.ann_set.videos.append(VideoInfo(
                id=new_vid, name=f"{video.name}_{suffix}", width=spec.out_size,
                height=spec.out_size, num_frames=video.num_frames))
            if frames and video.id in frames:
                result.frames[new_vid] = [
                    _resize_frame(f[:, x_off:x_off + crop][:crop], spec.out_size)
                    for f in frames[video.id]]
            for im in ann_set.images:
                if im.video_id != video.id:
                    continue
                new_img = FrameImage(id=next_image, video_id=new_vid, frame_index=im.frame_index,
                                     file_name=f"{video.name}_{suffix}/{im.frame_index:06d}.png")
                next_image += 1
                result.ann_set.images.append(new_img)
                for ann in anns_by_image.get(im.id, []):
                    x1, y1, x2, y2 = ann.corners()
                    cx1 = min(max(x1 - x_off, 0.0), float(crop))
                    cx2 = min(max(x2 - x_off, 0.0), float(crop))
                    cy1 = min(max(y1, 0.0), float(crop))
                    cy2 = min(max(y2, 0.0), float(crop))
                    clipped = (cx2 - cx1) * (cy2 - cy1)
                    original = (x2 - x1) * (y2 - y1)
                    if clipped <= 0 or original <= 0 or clipped < spec.keep_fraction * original:
                        continue
                    rx = round_half_up(cx1 * scale, spec.round_decimals)
                    ry = round_half_up(cy1 * scale, spec.round_decimals)
                    rw = round_half_up((cx2 - cx1) * scale, spec.round_decimals)
                    rh = round_half_up((cy2 - cy1) * scale, spec.round_decimals)
                    if rw <= 0 or rh <= 0:
                        continue
                    new_ann = BoxAnnotation(id=next_ann, image_id=new_img.id, track_id=ann.track_id,
                                            category_id=ann.category_id, bbox=(rx, ry, rw, rh),
                                            area=rw * rh, is_moving=ann.is_moving)
                    next_ann += 1
                    result.ann_set.annotations.append(new_ann)
                    result.source_map[new_ann.id] = (ann.id, x_off, scale)
    return result


# ---------------------------------------------------------------------------
# keyframe interpolation

def interpolate_keyframes(keyframes: list) -> dict:
    """Dense {frame_index: bbox} from sparse [(frame_index, bbox), ...].

    Box corners are interpolated linearly between consecutive keyframes; no
    extrapolation happens outside the first/last keyframe.
    """
    keyframes = sorted(keyframes, key=lambda kv: kv[0])
    dense = {}
    for (f0, b0), (f1, b1) in zip(keyframes, keyframes[1:]):
        if f1 <= f0:
            raise ValidationError(f"keyframes must be strictly increasing, got {f0} then {f1}")
        for f in range(f0, f1):
            alpha = (f - f0) / (f1 - f0)
            dense[f] = tuple(a + (b - a) * alpha for a, b in zip(b0, b1))
    if keyframes:
        dense[keyframes[-1][0]] = tuple(keyframes[-1][1])
    return dense


def densify_tracks(ann_set: VideoAnnotationSet, max_gap: int = 10) -> tuple:
    """Interpolate every track between its keyframes; returns (set, warnings)."""
    imgs = ann_set.images_by_id()
    by_track: dict = {}
    for ann in ann_set.annotations:
        im = imgs[ann.image_id]
        by_track.setdefault((im.video_id, ann.track_id), []).append((im.frame_index, ann))

    image_index = {(im.video_id, im.frame_index): im for im in ann_set.images}
    next_image = max((im.id for im in ann_set.images), default=0) + 1
    out = VideoAnnotationSet(videos=list(ann_set.videos), images=list(ann_set.images),
                             categories=list(ann_set.categories))
    warnings = []
    next_ann = 1
    for (video_id, track_id), rows in sorted(by_track.items()):
        rows.sort(key=lambda r: r[0])
        ref = rows[0][1]
        if len(rows) == 1:
            warnings.append(f"track {track_id} in video {video_id}: single keyframe, passed through")
        for (f0, _), (f1, _) in zip(rows, rows[1:]):
            if f1 - f0 > max_gap:
                raise ValidationError(
                    f"track {track_id} in video {video_id}: keyframe gap {f1 - f0} exceeds {max_gap}")
        dense = interpolate_keyframes([(f, a.bbox) for f, a in rows])
        for f, bbox in sorted(dense.items()):
            key = (video_id, f)
            if key not in image_index:
                image_index[key] = FrameImage(id=next_image, video_id=video_id, frame_index=f,
                                              file_name=f"video{video_id}/{f:06d}.png")
                out.images.append(image_index[key])
                next_image += 1
            out.annotations.append(BoxAnnotation(
                id=next_ann, image_id=image_index[key].id, track_id=track_id,
                category_id=ref.category_id, bbox=tuple(bbox), area=bbox[2] * bbox[3],
                is_moving=ref.is_moving))
            next_ann += 1
    return out, warnings


# ---------------------------------------------------------------------------
# clip-consistent augmentation

MAX_DEGREE = 45.0
MAX_SCALE = 0.9
MAX_PERSPECTIVE = 1e-2


def sample_clip_transform(params, frame_size: int, rng: np.random.Generator) -> np.ndarray:
    """One 3x3 homography for a whole clip: rotate, scale, perspective."""
    degree, scale_amp, perspective = params
    if abs(degree) > MAX_DEGREE or not 0.0 <= scale_amp <= MAX_SCALE or perspective > MAX_PERSPECTIVE:
        raise ValueError(f"augmentation params out of bounds: {params}")
    theta = np.deg2rad(rng.uniform(-degree, degree)) if degree else 0.0
    scale = 1.0 + (rng.uniform(-scale_amp, scale_amp) if scale_amp else 0.0)
    px, py = (rng.uniform(-perspective, perspective, size=2) if perspective else (0.0, 0.0))
    c = frame_size / 2.0
    to_origin = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1]], dtype=np.float64)
    rot = np.array([[np.cos(theta) * scale, -np.sin(theta) * scale, 0],
                    [np.sin(theta) * scale, np.cos(theta) * scale, 0],
                    [0, 0, 1]], dtype=np.float64)
    back = np.array([[1, 0, c], [0, 1, c], [0, 0, 1]], dtype=np.float64)
    persp = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1]], dtype=np.float64)
    return persp @ back @ rot @ to_origin


def warp_frame(frame: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Inverse-map bilinear warp with edge-clamped sampling."""
    if np.allclose(matrix, np.eye(3)):
        return frame.copy()
    height, width = frame.shape[:2]
    inv = np.linalg.inv(matrix)
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64),
                         indexing="ij")
    ones = np.ones_like(xs)
    src = np.stack([xs, ys, ones], axis=-1) @ inv.T
    sx = src[..., 0] / src[..., 2]
    sy = src[..., 1] / src[..., 2]
    sx = np.clip(sx, 0, width - 1)
    sy = np.clip(sy, 0, height - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    out = (frame[y0, x0] * (1 - fx) * (1 - fy) + frame[y0, x1] * fx * (1 - fy)
           + frame[y1, x0] * (1 - fx) * fy + frame[y1, x1] * fx * fy)
    return out.astype(frame.dtype)


def transform_boxes(boxes: np.ndarray, matrix: np.ndarray, frame_size: int) -> tuple:
    """Transformed axis-aligned hulls plus a keep mask (dropped if outside)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if not len(boxes):
        return boxes.copy(), np.zeros(0, dtype=bool)
    corners = np.stack([
        boxes[:, [0, 1]], boxes[:, [2, 1]], boxes[:, [0, 3]], boxes[:, [2, 3]],
    ], axis=1)  # (N, 4, 2)
    ones = np.ones((*corners.shape[:2], 1))
    warped = np.concatenate([corners, ones], axis=-1) @ matrix.T
    warped = warped[..., :2] / warped[..., 2:3]
    hull = np.concatenate([warped.min(axis=1), warped.max(axis=1)], axis=-1)
    clipped = np.clip(hull, 0.0, float(frame_size))
    keep = (clipped[:, 2] - clipped[:, 0] > 1e-3) & (clipped[:, 3] - clipped[:, 1] > 1e-3)
    return clipped, keep


def augment_clip(frames, boxes_list, classes_list, params, rng: np.random.Generator) -> tuple:
    """Apply one sampled transform identically to all frames and boxes."""
    size = frames[0].shape[0]
    matrix = sample_clip_transform(params, size, rng)
    out_frames = [warp_frame(f, matrix) for f in frames]
    out_boxes, out_classes = [], []
    for boxes, classes in zip(boxes_list, classes_list):
        warped, keep = transform_boxes(boxes, matrix, size)
        out_boxes.append(warped[keep])
        out_classes.append(np.asarray(classes)[keep])
    return out_frames, out_boxes, out_classes


# ---------------------------------------------------------------------------
# movement-attribute merging

def merge_movement_intervals(first: list, second: list) -> list:
    """Average two annotators' moving-interval sets.

    Overlapping intervals are paired greedily in order and replaced by the
    half-up-rounded midpoint of their endpoints; unpaired intervals are kept.
    """
    first = sorted(tuple(iv) for iv in first)
    second = sorted(tuple(iv) for iv in second)
    used = [False] * len(second)
    merged = []
    for a0, a1 in first:
        match = None
        for idx, (b0, b1) in enumerate(second):
            if used[idx]:
                continue
            if b0 <= a1 and a0 <= b1:  # overlap
                match = idx
                break
        if match is None:
            merged.append((a0, a1))
            continue
        used[match] = True
        b0, b1 = second[match]
        merged.append((int(round_half_up((a0 + b0) / 2.0)), int(round_half_up((a1 + b1) / 2.0))))
    merged.extend(iv for idx, iv in enumerate(second) if not used[idx])
    return sorted(merged)
