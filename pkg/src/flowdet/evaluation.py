"""Size-bucketed average precision with crowd/ignore-aware greedy matching.

AP follows the COCO recipe: greedy per-frame matching at 10 IoU thresholds
(0.50:0.05:0.95), 101-point interpolated precision-recall integration,
means taken over categories that have ground truth. Small-object buckets
partition area into es/rs/gs plus the conventional m/l split; bucket APs
use area-range mechanics (out-of-bucket ground truth is ignored rather
than failed, and unmatched detections outside the bucket are not counted
as false positives) unless hard area filtering is requested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .detector.postprocess import iou_matrix

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.50, 0.95, 10), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)

IGNORE_IOF = "iof"  # intersection over detection area, crowd-region style
IGNORE_IOU = "iou"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SizeBuckets:
    """Named half-open area intervals partitioning [0, inf)."""

    names: tuple
    bounds: tuple  # (lo, hi) per name, hi may be inf

    @classmethod
    def default(cls) -> "SizeBuckets":
        return cls(
            names=("es", "rs", "gs", "m", "l"),
            bounds=((0.0, 144.0), (144.0, 400.0), (400.0, 1024.0), (1024.0, 9216.0), (9216.0, float("inf"))),
        )

    def __post_init__(self):
        if len(self.names) != len(self.bounds):
            raise EvaluationError("bucket names and bounds must align")
        lo = 0.0
        for name, (b_lo, b_hi) in zip(self.names, self.bounds):
            if b_lo != lo or b_hi <= b_lo:
                raise EvaluationError(f"buckets must partition [0, inf) without gaps, bad interval {name}")
            lo = b_hi
        if lo != float("inf"):
            raise EvaluationError("buckets must cover up to infinity")

    def bucket_of(self, area: float) -> str:
        for name, (lo, hi) in zip(self.names, self.bounds):
            if lo <= area < hi:
                return name
        raise EvaluationError(f"area {area} not covered")

    def range_of(self, name: str) -> tuple:
        return self.bounds[self.names.index(name)]


def _validate_box(box, what: str):
    x1, y1, x2, y2 = [float(v) for v in box]
    if not all(np.isfinite([x1, y1, x2, y2])) or x2 <= x1 or y2 <= y1:
        raise EvaluationError(f"malformed {what} box {box}: need finite corners with x1<x2, y1<y2")


def iof_matrix(det_boxes: np.ndarray, gt_boxes: np.ndarray) -> np.ndarray:
    """Intersection over detection area; region-overlap measure for ignores."""
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(det_boxes[:, None, 0], gt_boxes[None, :, 0])
    y1 = np.maximum(det_boxes[:, None, 1], gt_boxes[None, :, 1])
    x2 = np.minimum(det_boxes[:, None, 2], gt_boxes[None, :, 2])
    y2 = np.minimum(det_boxes[:, None, 3], gt_boxes[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area = (det_boxes[:, 2] - det_boxes[:, 0]) * (det_boxes[:, 3] - det_boxes[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(area[:, None] > 0, inter / area[:, None], 0.0)


@dataclass
class FrameAssignment:
    det_match: np.ndarray    # per detection: matched gt index or -1
    det_ignored: np.ndarray  # matched an ignore/crowd gt (or area-filtered later)
    gt_matched: np.ndarray   # per gt: matching det index or -1

    @property
    def tp(self) -> int:
        return int(((self.det_match >= 0) & ~self.det_ignored).sum())

    @property
    def fp(self) -> int:
        return int(((self.det_match < 0) & ~self.det_ignored).sum())

    def fn(self, gt_ignored) -> int:
        return int((~np.asarray(gt_ignored) & (self.gt_matched < 0)).sum())


def match_frame(det_boxes, det_scores, gt_boxes, gt_ignored, iou_threshold: float,
                ignore_overlap: str = IGNORE_IOF) -> FrameAssignment:
    """Greedy score-descending matching of one frame, one category.

    Each detection takes the highest-overlap unmatched non-ignored gt with
    IoU >= threshold; failing that it may rest on an ignored gt (region
    overlap measured by ``ignore_overlap``), which discards it from both TP
    and FP counts. Ignored gts absorb any number of detections.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    det_scores = np.asarray(det_scores, dtype=np.float64).reshape(-1)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_ignored = np.asarray(gt_ignored, dtype=bool).reshape(-1)
    for box in det_boxes:
        _validate_box(box, "detection")
    for box in gt_boxes:
        _validate_box(box, "ground-truth")
    if np.any(det_scores[:-1] < det_scores[1:]):
        raise EvaluationError("detections must be sorted by descending score")

    n_det, n_gt = len(det_boxes), len(gt_boxes)
    det_match = np.full(n_det, -1, dtype=np.intp)
    det_ignored = np.zeros(n_det, dtype=bool)
    gt_matched = np.full(n_gt, -1, dtype=np.intp)
    if n_det == 0 or n_gt == 0:
        return FrameAssignment(det_match, det_ignored, gt_matched)

    ious = iou_matrix(det_boxes, gt_boxes)
    region = iof_matrix(det_boxes, gt_boxes) if ignore_overlap == IGNORE_IOF else ious

    for d in range(n_det):
        best = -1
        best_overlap = iou_threshold
        for g in range(n_gt):
            if gt_ignored[g]:
                continue
            if gt_matched[g] >= 0:
                continue
            if ious[d, g] >= best_overlap and ious[d, g] > (ious[d, best] if best >= 0 else -1.0):
                best = g
                best_overlap = ious[d, g]
        if best < 0:
            # fall back on ignore/crowd regions; these absorb repeatedly
            best_region = iou_threshold
            for g in range(n_gt):
                if not gt_ignored[g]:
                    continue
                if region[d, g] >= best_region:
                    best = g
                    best_region = region[d, g]
            if best >= 0:
                det_match[d] = best
                det_ignored[d] = True
            continue
        det_match[d] = best
        gt_matched[best] = d
    return FrameAssignment(det_match, det_ignored, gt_matched)


# ---------------------------------------------------------------------------
# dataset-level accumulation

@dataclass
class _FrameData:
    key: tuple              # (video_id, frame_index) for deterministic ordering
    det_boxes: np.ndarray
    det_scores: np.ndarray
    det_areas: np.ndarray
    gt_boxes: np.ndarray
    gt_areas: np.ndarray
    gt_ignored: np.ndarray  # crowd/ignore flags before bucket filtering


def _sorted_detections(dets):
    # order-independent tie-break: score, then geometry
    return sorted(dets, key=lambda d: (-d[1], d[0][0], d[0][1], d[0][2], d[0][3]))


def average_precision(assignments_by_threshold: dict) -> float | None:
    """Mean over IoU thresholds of 101-point interpolated AP.

    ``assignments_by_threshold`` maps threshold -> list of
    (scores, tp_flags, ignored_flags, num_gt, order_key) built per frame
    with any bucket filter already applied. Returns None when there is no
    countable ground truth.
    """
    per_threshold = []
    for thr in sorted(assignments_by_threshold):
        rows = assignments_by_threshold[thr]
        npos = sum(r[3] for r in rows)
        if npos == 0:
            return None
        scored = []
        for scores, tp, ignored, _, key in rows:
            for idx in range(len(scores)):
                if ignored[idx]:
                    continue
                scored.append((-scores[idx], key, idx, bool(tp[idx])))
        scored.sort()
        tp_cum = 0
        fp_cum = 0
        precisions = []
        recalls = []
        for _, _, _, is_tp in scored:
            tp_cum += 1 if is_tp else 0
            fp_cum += 0 if is_tp else 1
            precisions.append(tp_cum / (tp_cum + fp_cum))
            recalls.append(tp_cum / npos)
        precisions = np.asarray(precisions)
        recalls = np.asarray(recalls)
        for i in range(len(precisions) - 2, -1, -1):  # monotone envelope
            precisions[i] = max(precisions[i], precisions[i + 1])
        idxs = np.searchsorted(recalls, RECALL_POINTS, side="left")
        sampled = np.where(idxs < len(precisions), precisions[np.minimum(idxs, max(len(precisions) - 1, 0))], 0.0) \
            if len(precisions) else np.zeros_like(RECALL_POINTS)
        per_threshold.append(float(sampled.mean()))
    return float(np.mean(per_threshold))


def _frame_assignment_rows(frame: _FrameData, thresholds, bucket_range, ignore_overlap, area_filter_mode):
    """Greedy-match one frame at every threshold under one bucket filter."""
    gt_ignored = frame.gt_ignored.copy()
    det_boxes, det_scores, det_areas = frame.det_boxes, frame.det_scores, frame.det_areas
    if bucket_range is not None:
        lo, hi = bucket_range
        gt_ignored = gt_ignored | (frame.gt_areas < lo) | (frame.gt_areas >= hi)
        if area_filter_mode == "hard":
            keep = (det_areas >= lo) & (det_areas < hi)
            det_boxes, det_scores, det_areas = det_boxes[keep], det_scores[keep], det_areas[keep]
    num_gt = int((~gt_ignored).sum())
    rows = {}
    for thr in thresholds:
        a = match_frame(det_boxes, det_scores, frame.gt_boxes, gt_ignored, thr, ignore_overlap)
        tp = (a.det_match >= 0) & ~a.det_ignored
        ignored = a.det_ignored.copy()
        if bucket_range is not None and area_filter_mode == "coco":
            lo, hi = bucket_range
            ignored |= (a.det_match < 0) & ((det_areas < lo) | (det_areas >= hi))
        rows[thr] = (det_scores, tp, ignored, num_gt, frame.key)
    return rows


@dataclass
class EvalResult:
    ap: float | None
    ap_buckets: dict
    ap_per_category: dict
    gt_counts: dict
    det_count: int
    category_count: int

    def to_json(self) -> str:
        payload = {
            "ap": self.ap,
            "ap_buckets": self.ap_buckets,
            "ap_per_category": self.ap_per_category,
            "gt_counts": self.gt_counts,
            "det_count": self.det_count,
            "category_count": self.category_count,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalResult":
        raw = json.loads(text)
        return cls(ap=raw["ap"], ap_buckets=raw["ap_buckets"], ap_per_category=raw["ap_per_category"],
                   gt_counts=raw["gt_counts"], det_count=raw["det_count"],
                   category_count=raw["category_count"])

    def table(self, buckets: SizeBuckets | None = None) -> str:
        names = list((buckets or SizeBuckets.default()).names)
        cells = ["AP"] + [f"AP_{n}" for n in names]
        fmt = lambda v: "  -  " if v is None else f"{100.0 * v:5.1f}"
        values = [fmt(self.ap)] + [fmt(self.ap_buckets.get(n)) for n in names]
        head = " | ".join(f"{c:>6}" for c in cells)
        line = " | ".join(f"{v:>6}" for v in values)
        return head + "\n" + line


def evaluate(predictions, annotation_frames, categories, buckets: SizeBuckets | None = None,
             iou_thresholds=IOU_THRESHOLDS, ignore_overlap: str = IGNORE_IOF,
             area_filter_mode: str = "coco") -> EvalResult:
    """Score predictions against ground truth frames.

    ``annotation_frames`` maps (video_id, frame_index) -> list of
    (category_id, box_xyxy, area, ignored); ``predictions`` is a list of
    (video_id, frame_index, category_id, box_xyxy, score). ``categories``
    is the scoreable category-id list; unknown prediction categories are
    rejected.
    """
    buckets = buckets or SizeBuckets.default()
    categories = sorted(categories)
    known = set(categories)
    bad = sorted({p[2] for p in predictions if p[2] not in known})
    if bad:
        raise EvaluationError(f"unknown category ids in predictions: {bad}")

    preds_by = {}
    for vid, fidx, cat, box, score in predictions:
        _validate_box(box, "prediction")
        preds_by.setdefault((cat, (vid, fidx)), []).append((tuple(box), float(score)))

    frames_by_cat = {cat: [] for cat in categories}
    gt_counts = {name: 0 for name in buckets.names}
    for key in sorted(annotation_frames):
        anns = annotation_frames[key]
        for cat in categories:
            gt_rows = [(box, area, ignored) for (acat, box, area, ignored) in anns
                       if acat == cat or (ignored and acat not in known)]
            det_rows = _sorted_detections(preds_by.get((cat, key), []))
            det_boxes = np.asarray([b for b, _ in det_rows], dtype=np.float64).reshape(-1, 4)
            det_scores = np.asarray([s for _, s in det_rows], dtype=np.float64)
            det_areas = (det_boxes[:, 2] - det_boxes[:, 0]) * (det_boxes[:, 3] - det_boxes[:, 1]) \
                if len(det_boxes) else np.zeros(0)
            frames_by_cat[cat].append(_FrameData(
                key=key,
                det_boxes=det_boxes,
                det_scores=det_scores,
                det_areas=det_areas,
                gt_boxes=np.asarray([b for b, _, _ in gt_rows], dtype=np.float64).reshape(-1, 4),
                gt_areas=np.asarray([a for _, a, _ in gt_rows], dtype=np.float64),
                gt_ignored=np.asarray([i for _, _, i in gt_rows], dtype=bool),
            ))
        for _, _, area, ignored in anns:
            if not ignored:
                gt_counts[buckets.bucket_of(float(area))] += 1

    def ap_for(bucket_range):
        per_cat = {}
        for cat in categories:
            rows = {thr: [] for thr in iou_thresholds}
            for frame in frames_by_cat[cat]:
                for thr, row in _frame_assignment_rows(frame, iou_thresholds, bucket_range,
                                                       ignore_overlap, area_filter_mode).items():
                    rows[thr].append(row)
            per_cat[cat] = average_precision(rows)
        defined = [v for v in per_cat.values() if v is not None]
        return (float(np.mean(defined)) if defined else None), per_cat

    overall, per_category = ap_for(None)
    ap_buckets = {}
    for name in buckets.names:
        ap_buckets[name], _ = ap_for(buckets.range_of(name))

    return EvalResult(
        ap=overall,
        ap_buckets=ap_buckets,
        ap_per_category={str(k): v for k, v in per_category.items()},
        gt_counts=gt_counts,
        det_count=len(predictions),
        category_count=len(categories),
    )
