"""Prediction decoding and greedy per-class NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.tensor import Tensor, no_grad
from .loss import decode_box_corners

STRIDES = (8, 16, 32)


@dataclass
class Detection:
    frame_index: int
    category_id: int
    box: tuple  # (x1, y1, x2, y2) pixels, x1 < x2, y1 < y2
    score: float


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of corner boxes (continuous-coordinate convention)."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    y1 = np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    x2 = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2])
    y2 = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def nms_keep(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy NMS; returns kept indices in descending-score order."""
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size:
        top = order[0]
        keep.append(top)
        if order.size == 1:
            break
        rest = order[1:]
        ious = iou_matrix(boxes[top:top + 1], boxes[rest])[0]
        order = rest[ious <= iou_threshold]
    return np.asarray(keep, dtype=np.intp)


def decode_frame(preds, input_size: int, score_threshold: float, strides=STRIDES):
    """Raw per-level head outputs -> flat (boxes, scores, classes) arrays."""
    boxes, scores, classes = [], [], []
    with no_grad():
        for (cls_logits, box_raw), stride in zip(preds, strides):
            gh, gw, nc = cls_logits.shape
            cx = (np.arange(gw, dtype=np.float64) + 0.5) * stride
            cy = (np.arange(gh, dtype=np.float64) + 0.5) * stride
            centers_x = np.broadcast_to(cx[None, :, None], (gh, gw, 1))
            centers_y = np.broadcast_to(cy[:, None, None], (gh, gw, 1))
            x1, y1, x2, y2 = decode_box_corners(
                box_raw if isinstance(box_raw, Tensor) else Tensor(box_raw),
                centers_x, centers_y, stride)
            corner = np.stack([x1.data[..., 0], y1.data[..., 0], x2.data[..., 0], y2.data[..., 0]], axis=-1)
            corner = np.clip(corner, 0.0, float(input_size))
            logits = cls_logits.data if isinstance(cls_logits, Tensor) else cls_logits
            prob = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
            ii, jj, cc = np.nonzero(prob >= score_threshold)
            if ii.size:
                boxes.append(corner[ii, jj])
                scores.append(prob[ii, jj, cc])
                classes.append(cc)
    if not boxes:
        return np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64)
    return np.concatenate(boxes), np.concatenate(scores), np.concatenate(classes).astype(np.int64)


def decode_and_nms(preds, score_threshold: float, iou_threshold: float, input_size: int,
                   frame_index: int = 0, strides=STRIDES) -> list:
    """Decode one frame and apply per-class greedy NMS, sorted by score."""
    if not 0.0 <= score_threshold <= 1.0 or not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"thresholds must lie in [0,1], got {score_threshold}, {iou_threshold}")
    boxes, scores, classes = decode_frame(preds, input_size, score_threshold, strides)
    detections = []
    for cls in np.unique(classes):
        sel = classes == cls
        keep = nms_keep(boxes[sel], scores[sel], iou_threshold)
        for idx in keep:
            b = boxes[sel][idx]
            if b[2] <= b[0] or b[3] <= b[1]:
                continue
            detections.append(Detection(frame_index=frame_index, category_id=int(cls),
                                        box=tuple(float(v) for v in b), score=float(scores[sel][idx])))
    detections.sort(key=lambda d: (-d.score, d.box, d.category_id))
    return detections


def rerun_nms(detections, iou_threshold: float) -> list:
    """NMS over an existing detection list (idempotence checks)."""
    out = []
    for cls in sorted({d.category_id for d in detections}):
        group = [d for d in detections if d.category_id == cls]
        boxes = np.array([d.box for d in group], dtype=np.float64)
        scores = np.array([d.score for d in group], dtype=np.float64)
        keep = nms_keep(boxes, scores, iou_threshold)
        out.extend(group[i] for i in keep)
    out.sort(key=lambda d: (-d.score, d.box, d.category_id))
    return out
