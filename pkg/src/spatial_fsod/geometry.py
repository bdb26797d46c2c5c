"""Boxes, IoU, the 6-d normalized box encoding, and regression offsets.

Boxes are corner-form ``(x_min, y_min, x_max, y_max)`` in continuous image
coordinates.  Arrays of boxes are ``N x 4`` float64.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import kernels
from .numerics import ContractError

MIN_SIDE = 1e-3
# exp() guard for width/height offsets
MAX_LOG_SCALE = math.log(1000.0 / 16.0)


class Box(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def validate(self) -> "Box":
        if not all(math.isfinite(v) for v in self):
            raise ContractError(f"non-finite box {tuple(self)}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ContractError(f"degenerate box {tuple(self)}")
        return self

    def scaled(self, s: float) -> "Box":
        return Box(self.x_min * s, self.y_min * s, self.x_max * s, self.y_max * s)


class ImageDims(NamedTuple):
    w_img: float
    h_img: float

    def validate(self) -> "ImageDims":
        if not (self.w_img > 0 and self.h_img > 0):
            raise ContractError(f"image dims must be positive, got {tuple(self)}")
        return self


def iou(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a, b) -> np.ndarray:
    return kernels.iou_matrix(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def encode_box(b: Box, img: ImageDims) -> np.ndarray:
    """Normalized corners, normalized area and height/width aspect."""
    b = Box(*b).validate()
    img = ImageDims(*img).validate()
    return encode_boxes(np.array([b]), img)[0]


def encode_boxes(boxes: np.ndarray, img: ImageDims) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    if np.any(w <= 0) or np.any(h <= 0):
        raise ContractError("cannot encode a box with zero width or height")
    W, H = float(img[0]), float(img[1])
    return np.stack([
        boxes[:, 0] / W,
        boxes[:, 1] / H,
        boxes[:, 2] / W,
        boxes[:, 3] / H,
        (w * h) / (W * H),
        h / w,
    ], axis=1)


def _center_form(boxes):
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * w, boxes[:, 1] + 0.5 * h, w, h


def box_targets(proposals: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Center/size offsets taking each proposal onto its ground-truth box."""
    px, py, pw, ph = _center_form(np.asarray(proposals, dtype=np.float64).reshape(-1, 4))
    gx, gy, gw, gh = _center_form(np.asarray(gt, dtype=np.float64).reshape(-1, 4))
    return np.stack([(gx - px) / pw, (gy - py) / ph, np.log(gw / pw), np.log(gh / ph)], axis=1)


def apply_offsets(proposals: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`box_targets`.

    Returns the decoded boxes and a boolean mask of rows whose width or
    height had to be clamped up to ``MIN_SIDE``.
    """
    px, py, pw, ph = _center_form(np.asarray(proposals, dtype=np.float64).reshape(-1, 4))
    off = np.asarray(offsets, dtype=np.float64).reshape(-1, 4)
    cx = px + off[:, 0] * pw
    cy = py + off[:, 1] * ph
    w = pw * np.exp(np.minimum(off[:, 2], MAX_LOG_SCALE))
    h = ph * np.exp(np.minimum(off[:, 3], MAX_LOG_SCALE))
    clamped = (w < MIN_SIDE) | (h < MIN_SIDE)
    w = np.maximum(w, MIN_SIDE)
    h = np.maximum(h, MIN_SIDE)
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    return out, clamped


def clip_to_image(boxes: np.ndarray, img: ImageDims, min_side: float = MIN_SIDE) -> np.ndarray:
    """Clamp corners into ``[0, W] x [0, H]`` keeping at least ``min_side``."""
    b = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    W, H = float(img[0]), float(img[1])
    b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0.0, W)
    b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0.0, H)
    for lo, hi, limit in ((0, 2, W), (1, 3, H)):
        short = b[:, hi] - b[:, lo] < min_side
        if short.any():
            b[short, hi] = np.minimum(b[short, lo] + min_side, limit)
            b[short, lo] = b[short, hi] - min_side
    return b
