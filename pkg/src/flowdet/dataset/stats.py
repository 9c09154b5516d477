"""Dataset statistics: bucket shares, density, aspect ratios, movement."""

from __future__ import annotations

import csv
import io

import numpy as np

from ..evaluation import SizeBuckets
from .schema import VideoAnnotationSet

ASPECT_BINS = np.round(np.logspace(-3, 3, 19, base=2.0), 6)  # w/h from 1/8 to 8


def compute_stats(ann_set: VideoAnnotationSet, buckets: SizeBuckets | None = None) -> dict:
    """Aggregate report; ignore regions are excluded from object counts,
    crowd clusters are included (they are real annotated objects)."""
    buckets = buckets or SizeBuckets.default()
    cats = ann_set.category_by_id()
    imgs = ann_set.images_by_id()

    objects = [a for a in ann_set.annotations if not cats[a.category_id].is_ignore]
    ignores = len(ann_set.annotations) - len(objects)
    areas = np.asarray([a.area for a in objects], dtype=np.float64)

    bucket_counts = {name: 0 for name in buckets.names}
    for area in areas:
        bucket_counts[buckets.bucket_of(float(area))] += 1
    total = max(len(objects), 1)
    bucket_pct = {name: round(100.0 * n / total, 2) for name, n in bucket_counts.items()}

    per_frame: dict = {(im.video_id, im.frame_index): 0 for im in ann_set.images}
    for ann in objects:
        im = imgs[ann.image_id]
        per_frame[(im.video_id, im.frame_index)] += 1
    frame_counts = np.asarray(sorted(per_frame.values()), dtype=np.int64) if per_frame else np.zeros(0, np.int64)

    hist: dict = {}
    for n in frame_counts:
        hist[int(n)] = hist.get(int(n), 0) + 1

    per_video: dict = {v.id: 0 for v in ann_set.videos}
    for ann in objects:
        per_video[imgs[ann.image_id].video_id] += 1
    video_counts = sorted(per_video.values())
    cdf = [[int(c), round((i + 1) / len(video_counts), 6)] for i, c in enumerate(video_counts)]

    ratios = np.asarray([a.bbox[2] / a.bbox[3] for a in objects if a.bbox[3] > 0], dtype=np.float64)
    ratio_hist, _ = np.histogram(ratios, bins=ASPECT_BINS) if len(ratios) else (np.zeros(len(ASPECT_BINS) - 1, np.int64), None)

    per_category = {}
    for cat in ann_set.categories:
        members = [a for a in objects if a.category_id == cat.id]
        per_category[cat.name] = {
            "count": len(members),
            "moving_fraction": round(float(np.mean([a.is_moving for a in members])), 6) if members else None,
        }

    return {
        "videos": len(ann_set.videos),
        "images": len(ann_set.images),
        "objects": len(objects),
        "ignore_regions": ignores,
        "bucket_counts": bucket_counts,
        "bucket_percent": bucket_pct,
        "median_area": float(np.median(areas)) if len(areas) else None,
        "median_side": float(np.sqrt(np.median(areas))) if len(areas) else None,
        "mean_objects_per_frame": round(len(objects) / max(len(ann_set.images), 1), 4),
        "objects_per_frame_hist": sorted([[k, v] for k, v in hist.items()]),
        "objects_per_video_cdf": cdf,
        "aspect_ratio_bins": [round(float(b), 6) for b in ASPECT_BINS],
        "aspect_ratio_hist": [int(v) for v in ratio_hist],
        "per_category": per_category,
    }


def stats_to_csv(stats: dict) -> str:
    """Long-format (section,key,value) rows, plot-ready."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["section", "key", "value"])
    for key in ("videos", "images", "objects", "ignore_regions", "median_area",
                "median_side", "mean_objects_per_frame"):
        writer.writerow(["summary", key, stats[key]])
    for name, n in stats["bucket_counts"].items():
        writer.writerow(["bucket_count", name, n])
    for name, p in stats["bucket_percent"].items():
        writer.writerow(["bucket_percent", name, p])
    for count, frames in stats["objects_per_frame_hist"]:
        writer.writerow(["objects_per_frame_hist", count, frames])
    for count, frac in stats["objects_per_video_cdf"]:
        writer.writerow(["objects_per_video_cdf", count, frac])
    for lo, n in zip(stats["aspect_ratio_bins"][:-1], stats["aspect_ratio_hist"]):
        writer.writerow(["aspect_ratio_hist", lo, n])
    for name, rec in stats["per_category"].items():
        writer.writerow(["category_count", name, rec["count"]])
        writer.writerow(["category_moving_fraction", name, rec["moving_fraction"]])
    return buf.getvalue()
