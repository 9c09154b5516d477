"""Video annotation data model and its JSON serialization.

The on-disk format is COCO-VID-flavoured JSON: ``videos``, ``images``,
``annotations`` and ``categories`` arrays, with per-annotation track ids
and a movement flag. Crowd clusters and ignore regions are ordinary
annotations whose category name starts with ``crowd-`` or equals
``ignore``; scoring treats both as matchable-but-unpenalized regions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

FORMAT_VERSION = 1

STANDARD_CATEGORIES = (
    "person", "car", "bicycle", "cyclist",
    "crowd-person", "crowd-car", "crowd-bicycle", "ignore",
)


class SchemaError(ValueError):
    """Raised when a file does not parse as the annotation schema."""


class ValidationError(ValueError):
    """Raised in strict mode when data-model invariants fail."""


@dataclass
class Category:
    id: int
    name: str

    @property
    def is_ignore(self) -> bool:
        return self.name == "ignore"

    @property
    def is_crowd(self) -> bool:
        return self.name.startswith("crowd-")


@dataclass
class VideoInfo:
    id: int
    name: str
    width: int
    height: int
    num_frames: int


@dataclass
class FrameImage:
    id: int
    video_id: int
    frame_index: int
    file_name: str


@dataclass
class BoxAnnotation:
    id: int
    image_id: int
    track_id: int
    category_id: int
    bbox: tuple  # (x, y, w, h) pixels
    area: float
    is_moving: bool = False

    def corners(self) -> tuple:
        x, y, w, h = self.bbox
        return (x, y, x + w, y + h)


def _require(record: dict, keys, what: str, errors: list) -> bool:
    missing = [k for k in keys if k not in record]
    if missing:
        errors.append(f"{what} {record.get('id', '?')}: missing keys {missing}")
        return False
    return True


@dataclass
class VideoAnnotationSet:
    videos: list = field(default_factory=list)
    images: list = field(default_factory=list)
    annotations: list = field(default_factory=list)
    categories: list = field(default_factory=list)

    # -- indexes -----------------------------------------------------------

    def category_by_id(self) -> dict:
        return {c.id: c for c in self.categories}

    def images_by_id(self) -> dict:
        return {im.id: im for im in self.images}

    def videos_by_id(self) -> dict:
        return {v.id: v for v in self.videos}

    def annotations_by_image(self) -> dict:
        out = {}
        for ann in self.annotations:
            out.setdefault(ann.image_id, []).append(ann)
        return out

    def scoreable_category_ids(self) -> list:
        return [c.id for c in self.categories if not (c.is_ignore or c.is_crowd)]

    # -- serialization -----------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "categories": [{"id": c.id, "name": c.name} for c in self.categories],
            "videos": [{"id": v.id, "name": v.name, "width": v.width, "height": v.height,
                        "num_frames": v.num_frames} for v in self.videos],
            "images": [{"id": im.id, "video_id": im.video_id, "frame_index": im.frame_index,
                        "file_name": im.file_name} for im in self.images],
            "annotations": [{"id": a.id, "image_id": a.image_id, "track_id": a.track_id,
                             "category_id": a.category_id, "bbox": list(a.bbox), "area": a.area,
                             "is_moving": a.is_moving} for a in self.annotations],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_payload(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def from_payload(cls, raw: dict) -> "VideoAnnotationSet":
        errors: list = []
        if not isinstance(raw, dict):
            raise SchemaError("top level must be a JSON object")
        version = raw.get("format_version")
        if version != FORMAT_VERSION:
            errors.append(f"format_version {version!r} unsupported (expected {FORMAT_VERSION})")
        cats, vids, imgs, anns = [], [], [], []
        for rec in raw.get("categories", []):
            if _require(rec, ("id", "name"), "category", errors):
                cats.append(Category(id=int(rec["id"]), name=str(rec["name"])))
        for rec in raw.get("videos", []):
            if _require(rec, ("id", "name", "width", "height", "num_frames"), "video", errors):
                vids.append(VideoInfo(id=int(rec["id"]), name=str(rec["name"]), width=int(rec["width"]),
                                      height=int(rec["height"]), num_frames=int(rec["num_frames"])))
        for rec in raw.get("images", []):
            if _require(rec, ("id", "video_id", "frame_index", "file_name"), "image", errors):
                imgs.append(FrameImage(id=int(rec["id"]), video_id=int(rec["video_id"]),
                                       frame_index=int(rec["frame_index"]), file_name=str(rec["file_name"])))
        for rec in raw.get("annotations", []):
            if not _require(rec, ("id", "image_id", "track_id", "category_id", "bbox", "area"),
                            "annotation", errors):
                continue
            bbox = rec["bbox"]
            if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
                errors.append(f"annotation {rec['id']}: bbox must have 4 entries, got {bbox!r}")
                continue
            anns.append(BoxAnnotation(id=int(rec["id"]), image_id=int(rec["image_id"]),
                                      track_id=int(rec["track_id"]), category_id=int(rec["category_id"]),
                                      bbox=tuple(float(v) for v in bbox), area=float(rec["area"]),
                                      is_moving=bool(rec.get("is_moving", False))))
        if errors:
            raise SchemaError("schema violations:\n  " + "\n  ".join(errors))
        return cls(videos=vids, images=imgs, annotations=anns, categories=cats)

    @classmethod
    def load(cls, path, strict: bool = False) -> "VideoAnnotationSet":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
        out = cls.from_payload(raw)
        warnings = out.validate(strict=strict)
        out.load_warnings = warnings
        return out

    # -- invariants ---------------------------------------------------------

    def validate(self, strict: bool = False) -> list:
        """Check data-model invariants; returns warnings (raises in strict mode)."""
        problems = []
        cats = self.category_by_id()
        imgs = self.images_by_id()
        vids = self.videos_by_id()
        for im in self.images:
            if im.video_id not in vids:
                problems.append(f"image {im.id}: unknown video {im.video_id}")
        track_cat: dict = {}
        track_frames: dict = {}
        for ann in self.annotations:
            if ann.category_id not in cats:
                problems.append(f"annotation {ann.id}: unknown category {ann.category_id}")
                continue
            im = imgs.get(ann.image_id)
            if im is None:
                problems.append(f"annotation {ann.id}: unknown image {ann.image_id}")
                continue
            video = vids.get(im.video_id)
            x, y, w, h = ann.bbox
            if w <= 0 or h <= 0:
                problems.append(f"annotation {ann.id}: non-positive box size {ann.bbox}")
            if video and (x < -0.5 or y < -0.5 or x + w > video.width + 0.5 or y + h > video.height + 0.5):
                problems.append(f"annotation {ann.id}: box {ann.bbox} outside {video.width}x{video.height}")
            if abs(ann.area - w * h) > 1.0:
                problems.append(f"annotation {ann.id}: area {ann.area} != w*h {w * h:.2f}")
            key = (im.video_id, ann.track_id)
            if key in track_cat and track_cat[key] != ann.category_id:
                problems.append(
                    f"annotation {ann.id}: track {ann.track_id} changes category "
                    f"{track_cat[key]} -> {ann.category_id}")
            track_cat.setdefault(key, ann.category_id)
            fkey = (im.video_id, ann.track_id, im.frame_index)
            if fkey in track_frames:
                problems.append(f"annotation {ann.id}: track {ann.track_id} duplicated in frame {im.frame_index}")
            track_frames[fkey] = ann.id
            if cats[ann.category_id].is_ignore and ann.is_moving:
                problems.append(f"annotation {ann.id}: ignore region carries is_moving")
        if strict and problems:
            raise ValidationError("invariant violations:\n  " + "\n  ".join(problems))
        return problems

    # -- evaluation adapter --------------------------------------------------

    def eval_frames(self) -> dict:
        """(video_id, frame_index) -> [(category_id, box_xyxy, area, ignored)]."""
        cats = self.category_by_id()
        imgs = self.images_by_id()
        frames = {(im.video_id, im.frame_index): [] for im in self.images}
        for ann in self.annotations:
            im = imgs[ann.image_id]
            cat = cats[ann.category_id]
            ignored = cat.is_ignore or cat.is_crowd
            frames[(im.video_id, im.frame_index)].append(
                (ann.category_id, ann.corners(), float(ann.area), ignored))
        return frames


def standard_categories() -> list:
    return [Category(id=i + 1, name=name) for i, name in enumerate(STANDARD_CATEGORIES)]


@dataclass
class SplitSpec:
    """Named, disjoint video-id lists (train/test)."""

    splits: dict

    def validate(self) -> None:
        seen: dict = {}
        for name, ids in self.splits.items():
            for vid in ids:
                if vid in seen:
                    raise ValidationError(f"video {vid} appears in both {seen[vid]} and {name}")
                seen[vid] = name

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.splits, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SplitSpec":
        spec = cls(splits=json.loads(Path(path).read_text()))
        spec.validate()
        return spec

    def subset(self, ann_set: VideoAnnotationSet, name: str) -> VideoAnnotationSet:
        ids = set(self.splits[name])
        keep_imgs = [im for im in ann_set.images if im.video_id in ids]
        img_ids = {im.id for im in keep_imgs}
        return VideoAnnotationSet(
            videos=[v for v in ann_set.videos if v.id in ids],
            images=keep_imgs,
            annotations=[a for a in ann_set.annotations if a.image_id in img_ids],
            categories=list(ann_set.categories),
        )
