"""Independent brute-force oracles: straight-line loops, no shared code with
the implementations they check."""

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    """Direct nested-loop cross-correlation."""
    height, width, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.zeros((height + 2 * padding, width + 2 * padding, cin), dtype=x.dtype)
    xp[padding:padding + height, padding:padding + width] = x
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((out_h, out_w, cout), dtype=x.dtype)
    for i in range(out_h):
        for j in range(out_w):
            for co in range(cout):
                acc = 0.0 if b is None else float(b[co])
                for ki in range(kh):
                    for kj in range(kw):
                        for c in range(cin):
                            acc += xp[i * stride + ki, j * stride + kj, c] * w[ki, kj, c, co]
                out[i, j, co] = acc
    return out


def bilinear_point(src, x, y):
    """Four-neighbour blend with zero outside [0, W-1] x [0, H-1]."""
    height, width, channels = src.shape
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    value = np.zeros(channels, dtype=src.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            xi, yi = x0 + dx, y0 + dy
            if 0 <= xi < width and 0 <= yi < height:
                weight = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
                value = value + weight * src[yi, xi]
    return value


def gru_scalar(h, x, wz, bz, wr, br, wh, bh):
    """Per-pixel GRU with 1x1 kernels, computed scalar-wise."""
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    hx = np.concatenate([h, x], axis=-1)
    z = sig(hx @ wz + bz)
    r = sig(hx @ wr + br)
    cand = np.tanh(np.concatenate([r * h, x], axis=-1) @ wh + bh)
    return (1 - z) * h + z * cand


def correlation_loops(a, b, scale=False):
    """Quadruple-nested dot-product volume."""
    ha, wa, ch = a.shape
    hb, wb, _ = b.shape
    out = np.zeros((ha, wa, hb, wb), dtype=np.float64)
    for i in range(ha):
        for j in range(wa):
            for p in range(hb):
                for q in range(wb):
                    acc = 0.0
                    for c in range(ch):
                        acc += a[i, j, c] * b[p, q, c]
                    out[i, j, p, q] = acc
    if scale:
        out /= np.sqrt(ch)
    return out


def lookup_window_loops(volume, level_l, level_k, flow, radius):
    """Direct window indexing for integer sampling positions.

    ``flow`` entries scaled into level-k coordinates must be integral for
    the result to be exact.
    """
    h0, w0, h1, w1 = volume.shape
    scale = 2.0 ** (level_l - level_k)
    size = 2 * radius + 1
    out = np.zeros((h0, w0, size * size), dtype=volume.dtype)
    for i in range(h0):
        for j in range(w0):
            cx = (j + flow[i, j, 0]) * scale
            cy = (i + flow[i, j, 1]) * scale
            idx = 0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    x = int(round(cx + dx))
                    y = int(round(cy + dy))
                    if 0 <= x < w1 and 0 <= y < h1:
                        out[i, j, idx] = volume[i, j, y, x]
                    idx += 1
    return out


def iou_single(box_a, box_b):
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def iof_single(det, gt):
    dx1, dy1, dx2, dy2 = det
    gx1, gy1, gx2, gy2 = gt
    iw = max(0.0, min(dx2, gx2) - max(dx1, gx1))
    ih = max(0.0, min(dy2, gy2) - max(dy1, gy1))
    area = (dx2 - dx1) * (dy2 - dy1)
    return iw * ih / area if area > 0 else 0.0


def nms_loops(boxes, scores, iou_threshold):
    """O(n^2) greedy reference; returns kept indices, descending score."""
    order = sorted(range(len(boxes)), key=lambda i: -scores[i])
    keep = []
    removed = set()
    for i in order:
        if i in removed:
            continue
        keep.append(i)
        for j in order:
            if j == i or j in removed:
                continue
            if iou_single(boxes[i], boxes[j]) > iou_threshold:
                removed.add(j)
    return keep


def match_frame_loops(det_boxes, det_scores, gt_boxes, gt_ignored, threshold, region="iof"):
    """Reference greedy matcher mirroring the documented semantics."""
    n_det, n_gt = len(det_boxes), len(gt_boxes)
    det_match = [-1] * n_det
    det_ignored = [False] * n_det
    gt_matched = [-1] * n_gt
    for d in range(n_det):
        best, best_val = -1, threshold
        for g in range(n_gt):
            if gt_ignored[g] or gt_matched[g] >= 0:
                continue
            val = iou_single(det_boxes[d], gt_boxes[g])
            if val >= best_val and (best < 0 or val > best_val):
                best, best_val = g, val
        if best >= 0:
            det_match[d] = best
            gt_matched[best] = d
            continue
        best, best_val = -1, threshold
        for g in range(n_gt):
            if not gt_ignored[g]:
                continue
            val = iof_single(det_boxes[d], gt_boxes[g]) if region == "iof" else iou_single(det_boxes[d], gt_boxes[g])
            if val >= best_val:
                best, best_val = g, val
        if best >= 0:
            det_match[d] = best
            det_ignored[d] = True
    return det_match, det_ignored, gt_matched


def detection_loss_loops(cls_logits_list, box_raw_list, targets, strides=(8, 16, 32),
                         center_range=0.75):
    """Straight-line reimplementation of the detection loss formula."""
    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    def softplus(v):
        return np.log1p(np.exp(-abs(v))) + max(v, 0.0)

    cls_sum = 0.0
    cells = 0
    box_sum = 0.0
    num_pos = 0
    for cls_logits, box_raw, tgt, stride in zip(cls_logits_list, box_raw_list, targets, strides):
        gh, gw, nc = cls_logits.shape
        for i in range(gh):
            for j in range(gw):
                for c in range(nc):
                    x = cls_logits[i, j, c]
                    t = tgt.cls[i, j, c]
                    cls_sum += max(x, 0.0) - x * t + np.log1p(np.exp(-abs(x)))
                    cells += 1
        for i, j, gt_box in zip(tgt.pos_i, tgt.pos_j, tgt.boxes):
            raw = box_raw[i, j]
            cx = (j + 0.5) * stride + np.tanh(raw[0]) * center_range * stride
            cy = (i + 0.5) * stride + np.tanh(raw[1]) * center_range * stride
            w = softplus(raw[2]) * stride
            h = softplus(raw[3]) * stride
            pred = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            box_sum += 1.0 - iou_single(pred, tuple(gt_box))
            num_pos += 1
    denom = num_pos if num_pos else cells
    total = cls_sum / denom + (box_sum / num_pos if num_pos else 0.0)
    return total
