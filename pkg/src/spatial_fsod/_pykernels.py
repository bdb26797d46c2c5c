"""NumPy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``SPATIAL_FSOD_PURE_PYTHON`` is set.  Signatures and results match the
compiled module exactly.
"""

import numpy as np


def row_normalize(x):
    deg = x.sum(axis=1)
    inv = np.zeros_like(deg)
    live = deg != 0.0
    inv[live] = 1.0 / deg[live]
    return x * inv[:, None], deg


def row_normalize_backward(g, x, out):
    deg = x.sum(axis=1)
    inv = np.zeros_like(deg)
    live = deg != 0.0
    inv[live] = 1.0 / deg[live]
    dot = (g * out).sum(axis=1)
    return (g - dot[:, None]) * inv[:, None]


def iou_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix0 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy0 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix1 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix1 - ix0, 0.0, None) * np.clip(iy1 - iy0, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def nms(boxes, scores, thresh):
    """Greedy non-maximum suppression; returns kept indices by descending score."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] >= thresh
    return np.array(keep, dtype=np.int64)


def greedy_match(det_boxes, gt_boxes, thresh):
    """Match detections (already in descending-confidence order) to ground truth.

    Each detection takes the highest-IoU ground truth that is still unmatched,
    provided that IoU reaches ``thresh``.  Returns the matched ground-truth
    index per detection, or -1.
    """
    ious = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(ious.shape[1], dtype=bool)
    match = np.full(ious.shape[0], -1, dtype=np.int64)
    for d in range(ious.shape[0]):
        best, best_iou = -1, -1.0
        for j in range(ious.shape[1]):
            if not taken[j] and ious[d, j] >= thresh and ious[d, j] > best_iou:
                best, best_iou = j, ious[d, j]
        if best >= 0:
            taken[best] = True
            match[d] = best
    return match
