"""Inference with per-category NMS, and AP evaluation split into novel/base/all."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .checkpoint import Checkpoint
from .config import RunConfig, config_from_dict
from .geometry import apply_offsets
from .model import predict
from .scenegen import CategorySpace, Scene, SceneSet


@dataclass(frozen=True)
class Detection:
    scene: int
    category: int
    confidence: float
    box: tuple[float, float, float, float]


@dataclass
class MetricReport:
    """Per-category AP by IoU threshold; NaN marks categories without ground truth."""

    thresholds: tuple[float, ...]
    per_category: dict[int, dict[float, float]]
    novel_ids: list[int] = field(default_factory=list)
    base_ids: list[int] = field(default_factory=list)

    def _mean(self, ids: Iterable[int], t: float) -> float:
        vals = [self.per_category[c][t] for c in ids
                if c in self.per_category and not math.isnan(self.per_category[c][t])]
        return float(np.mean(vals)) if vals else float("nan")

    def nap(self, t: float = 0.5) -> float:
        return self._mean(self.novel_ids, t)

    def bap(self, t: float = 0.5) -> float:
        return self._mean(self.base_ids, t)

    def map(self, t: float = 0.5) -> float:
        return self._mean(self.per_category, t)

    @property
    def nAP50(self) -> float:
        return self.nap(0.5)

    @property
    def bAP50(self) -> float:
        return self.bap(0.5)

    @property
    def mAP50(self) -> float:
        return self.map(0.5)

    def rows(self) -> list[list[str]]:
        head = ["row", "split"] + [f"AP{int(round(t * 100))}" for t in self.thresholds]
        out = [head]
        novel = set(self.novel_ids)
        for c in sorted(self.per_category):
            split = "novel" if c in novel else "base"
            out.append([f"cat{c}", split] + [_fmt(self.per_category[c][t]) for t in self.thresholds])
        out.append(["nAP", "novel"] + [_fmt(self.nap(t)) for t in self.thresholds])
        out.append(["bAP", "base"] + [_fmt(self.bap(t)) for t in self.thresholds])
        out.append(["mAP", "all"] + [_fmt(self.map(t)) for t in self.thresholds])
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.6f}"


# ---------------------------------------------------------------------------
# AP


def ap_from_matches(tp: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP for detections already sorted by confidence."""
    if n_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def match_category(dets: list[Detection], gts: dict[int, np.ndarray], iou_thresh: float) -> list[bool]:
    """TP flags for one category's detections in descending-confidence order."""
    flags = [False] * len(dets)
    by_scene: dict[int, list[int]] = {}
    for j, det in enumerate(dets):
        by_scene.setdefault(det.scene, []).append(j)
    for scene, idx in by_scene.items():
        gt = gts.get(scene)
        if gt is None or len(gt) == 0:
            continue
        boxes = np.array([dets[j].box for j in idx], dtype=np.float64)
        match = kernels.greedy_match(boxes, gt, iou_thresh)
        matched = match[match >= 0]
        if len(np.unique(matched)) != len(matched):
            raise AssertionError("ground truth matched twice")
        for j, m in zip(idx, match):
            flags[j] = bool(m >= 0)
    return flags


def _sorted(dets: Iterable[Detection]) -> list[Detection]:
    # stable: ties keep input order
    return sorted(dets, key=lambda d: -d.confidence)


def average_precision(detections: Iterable[Detection], ground_truth: Sequence[Scene],
                      iou_thresh: float, categories: Iterable[int]) -> dict[int, float]:
    """Per-category AP at one IoU threshold."""
    dets_by_cat: dict[int, list[Detection]] = {}
    for d in detections:
        if not 0 <= d.scene < len(ground_truth):
            raise KeyError(f"detection refers to unknown scene {d.scene}")
        dets_by_cat.setdefault(d.category, []).append(d)
    out = {}
    for c in categories:
        gts = {s: sc.boxes[sc.cats == c] for s, sc in enumerate(ground_truth)}
        n_gt = sum(len(b) for b in gts.values())
        dets = _sorted(dets_by_cat.get(c, []))
        out[c] = ap_from_matches(match_category(dets, gts, iou_thresh), n_gt)
    return out


def evaluate_detections(detections: list[Detection], ground_truth: Sequence[Scene],
                        base_ids: list[int], novel_ids: list[int],
                        thresholds: Sequence[float] = (0.5,)) -> MetricReport:
    cats = list(base_ids) + list(novel_ids)
    per: dict[int, dict[float, float]] = {c: {} for c in cats}
    for t in thresholds:
        for c, ap in average_precision(detections, ground_truth, t, cats).items():
            per[c][t] = ap
    return MetricReport(tuple(thresholds), per, list(novel_ids), list(base_ids))


# ---------------------------------------------------------------------------
# inference


def detect(tensors: dict[str, np.ndarray], active_ids: list[int], roi, config: RunConfig,
           scene_id: int = 0) -> list[Detection]:
    probs, offsets = predict(tensors, roi.features, roi.geo, config)
    boxes, _ = apply_offsets(roi.boxes, offsets)
    label_of = np.array([0] + list(active_ids))
    cls = probs.argmax(axis=1)
    conf = probs[np.arange(len(cls)), cls]
    keep = (cls != 0) & (conf >= config.score_floor)
    out: list[Detection] = []
    for c in np.unique(cls[keep]):
        sel = np.flatnonzero(keep & (cls == c))
        for j in sel[kernels.nms(boxes[sel], conf[sel], config.nms_thresh)]:
            out.append(Detection(scene_id, int(label_of[c]), float(conf[j]),
                                 tuple(float(v) for v in boxes[j])))
    return _sorted(out)


def checkpoint_config(ckpt: Checkpoint, fallback: RunConfig | None = None) -> RunConfig:
    return config_from_dict(ckpt.config) if ckpt.config else (fallback or RunConfig())


def infer(ckpt: Checkpoint, scene: Scene, space: CategorySpace, config: RunConfig | None = None,
          scene_id: int = 0, roi=None) -> list[Detection]:
    """Detections for one scene, sorted by descending confidence."""
    from .scenegen import propose_rois, stream

    config = config or checkpoint_config(ckpt)
    if roi is None:
        roi = propose_rois(scene, space, config, stream(config.seed, "rois/infer", scene_id))
    return detect(ckpt.tensors, ckpt.active_ids, roi, config, scene_id)


def evaluate(ckpt: Checkpoint, space: CategorySpace, data: SceneSet, config: RunConfig | None = None,
             thresholds: Sequence[float] | None = None) -> MetricReport:
    """Run inference over a split and score it; AP is reported for every
    category of the space, so categories the checkpoint cannot predict score 0."""
    config = config or checkpoint_config(ckpt)
    thresholds = tuple(thresholds or config.iou_thresholds)
    dets: list[Detection] = []
    for i, scene in enumerate(data.scenes):
        dets.extend(detect(ckpt.tensors, ckpt.active_ids, data.rois(i, space, config), config, i))
    return evaluate_detections(dets, data.scenes, space.base_ids, space.novel_ids, thresholds)
