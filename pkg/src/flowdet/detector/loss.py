"""Target assignment and the detection loss (mean BCE + 1-IoU on positives)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.ops import (
    add, bce_with_logits, div, gather_pixels, maximum, minimum, mul, softplus, split, sub, tanh, tsum,
)
from ..numerics.tensor import Tensor

STRIDES = (8, 16, 32)

# centre offsets may need to reach half a cell; leave tanh headroom
CENTER_RANGE = 0.75


@dataclass
class LevelTargets:
    cls: np.ndarray     # (H, W, num_classes) 0/1
    pos_i: np.ndarray   # (N,) rows of positive cells
    pos_j: np.ndarray   # (N,) cols
    boxes: np.ndarray   # (N, 4) xyxy pixels


def assign_targets(boxes: np.ndarray, classes: np.ndarray, grid_shapes, num_classes: int,
                   strides=STRIDES) -> list:
    """Each box claims the cell containing its centre at the deepest level
    whose stride does not exceed sqrt(area), clamped to the finest level;
    collisions inside a cell are won by the smaller box."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    claims = {}  # (level, i, j) -> (area, box, cls)
    for box, cls in zip(boxes, classes):
        x1, y1, x2, y2 = box
        w, h = x2 - x1, y2 - y1
        if w <= 0 or h <= 0:
            continue
        extent = np.sqrt(w * h)
        level = 0
        for idx, stride in enumerate(strides):
            if stride <= extent:
                level = idx
        gh, gw = grid_shapes[level]
        stride = strides[level]
        j = min(max(int((x1 + x2) / 2 // stride), 0), gw - 1)
        i = min(max(int((y1 + y2) / 2 // stride), 0), gh - 1)
        key = (level, i, j)
        area = w * h
        if key not in claims or area < claims[key][0]:
            claims[key] = (area, box, int(cls))

    targets = []
    for level, (gh, gw) in enumerate(grid_shapes):
        cls_t = np.zeros((gh, gw, num_classes), dtype=np.float64)
        pos_i, pos_j, pos_boxes = [], [], []
        for (lvl, i, j), (_, box, cls) in claims.items():
            if lvl != level:
                continue
            cls_t[i, j, cls] = 1.0
            pos_i.append(i)
            pos_j.append(j)
            pos_boxes.append(box)
        targets.append(LevelTargets(
            cls=cls_t,
            pos_i=np.asarray(pos_i, dtype=np.intp),
            pos_j=np.asarray(pos_j, dtype=np.intp),
            boxes=np.asarray(pos_boxes, dtype=np.float64).reshape(-1, 4),
        ))
    return targets


def decode_box_corners(raw: Tensor, centers_x, centers_y, stride: int):
    """Map raw head channels to corner boxes in pixels.

    Channels are (dx, dy, w, h): centre offset via tanh within
    +/- CENTER_RANGE*stride, sizes via softplus*stride (always positive).
    ``centers_x``/``centers_y`` broadcast against ``raw[..., :1]``.
    """
    dx, dy, wr, hr = split(raw, [1, 1, 1, 1], axis=-1)
    dtype = raw.dtype
    cx = add(Tensor(np.asarray(centers_x, dtype=dtype)), mul(tanh(dx), Tensor(np.asarray(CENTER_RANGE * stride, dtype=dtype))))
    cy = add(Tensor(np.asarray(centers_y, dtype=dtype)), mul(tanh(dy), Tensor(np.asarray(CENTER_RANGE * stride, dtype=dtype))))
    half_w = mul(softplus(wr), Tensor(np.asarray(0.5 * stride, dtype=dtype)))
    half_h = mul(softplus(hr), Tensor(np.asarray(0.5 * stride, dtype=dtype)))
    return sub(cx, half_w), sub(cy, half_h), add(cx, half_w), add(cy, half_h)


def iou_corners(px1, py1, px2, py2, tx1, ty1, tx2, ty2):
    """Differentiable IoU of corner boxes; predicted sizes must be positive."""
    zero = 0.0
    iw = maximum(sub(minimum(px2, tx2), maximum(px1, tx1)), zero)
    ih = maximum(sub(minimum(py2, ty2), maximum(py1, ty1)), zero)
    inter = mul(iw, ih)
    area_p = mul(sub(px2, px1), sub(py2, py1))
    area_t = mul(sub(tx2, tx1), sub(ty2, ty1))
    union = sub(add(area_p, area_t), inter)
    return div(inter, union)


def cell_centers(pos_i, pos_j, stride: int):
    cx = (np.asarray(pos_j, dtype=np.float64) + 0.5) * stride
    cy = (np.asarray(pos_i, dtype=np.float64) + 0.5) * stride
    return cx[:, None], cy[:, None]


@dataclass
class LossBreakdown:
    total: float
    cls: float
    box: float
    num_pos: int
    cls_only: bool  # flagged when a frame had no positive cells


def compute_loss(preds, targets, strides=STRIDES):
    """Scalar loss tensor plus a per-term breakdown for one frame."""
    cls_total = None
    box_total = None
    cell_count = 0
    num_pos = 0
    for (cls_logits, box_raw), tgt, stride in zip(preds, targets, strides):
        bce = tsum(bce_with_logits(cls_logits, Tensor(np.asarray(tgt.cls, dtype=cls_logits.dtype))))
        cls_total = bce if cls_total is None else add(cls_total, bce)
        cell_count += int(np.prod(cls_logits.shape))
        if len(tgt.pos_i) == 0:
            continue
        raw = gather_pixels(box_raw, tgt.pos_i, tgt.pos_j)  # (N, 4)
        cx, cy = cell_centers(tgt.pos_i, tgt.pos_j, stride)
        px1, py1, px2, py2 = decode_box_corners(raw, cx, cy, stride)
        dtype = box_raw.dtype
        t = tgt.boxes.astype(dtype)
        iou = iou_corners(px1, py1, px2, py2,
                          Tensor(t[:, 0:1]), Tensor(t[:, 1:2]), Tensor(t[:, 2:3]), Tensor(t[:, 3:4]))
        miss = tsum(sub(Tensor(np.asarray(1.0, dtype=dtype)), iou))
        box_total = miss if box_total is None else add(box_total, miss)
        num_pos += len(tgt.pos_i)

    # normalize the BCE sum by positive count so a handful of tiny objects
    # is not drowned out by the negative cells; cell count is the fallback
    # when a frame is empty
    denom = num_pos if num_pos else cell_count
    cls_loss = mul(cls_total, Tensor(np.asarray(1.0 / denom, dtype=cls_total.dtype)))
    if box_total is not None:
        box_loss = mul(box_total, Tensor(np.asarray(1.0 / num_pos, dtype=box_total.dtype)))
        total = add(cls_loss, box_loss)
        box_val = float(box_loss.data)
    else:
        total = cls_loss
        box_val = 0.0
    breakdown = LossBreakdown(total=float(total.data), cls=float(cls_loss.data),
                              box=box_val, num_pos=num_pos, cls_only=box_total is None)
    return total, breakdown
