"""Shared builders for tests that need a model batch."""

import math

import numpy as np

from spatial_fsod import numerics as nx
from spatial_fsod.config import TINY, RunConfig
from spatial_fsod.evaluation import Detection
from spatial_fsod.geometry import ImageDims
from spatial_fsod.heads import loss_base
from spatial_fsod.model import forward, init_params, leaves, trainable_names
from spatial_fsod.numerics import Tape
from spatial_fsod.scenegen import Scene


def random_batch(config: RunConfig, n: int, seed: int):
    """Features, box encodings, labels and targets for ``n`` proposals."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, config.d))
    xy = rng.uniform(0.0, 0.5, size=(n, 2))
    wh = rng.uniform(0.1, 0.5, size=(n, 2))
    geo = np.hstack([xy, xy + wh, wh.prod(axis=1, keepdims=True), (wh[:, 1] / wh[:, 0])[:, None]])
    labels = rng.integers(0, config.n_base + 1, size=n)
    labels[0] = 1  # at least one positive
    targets = rng.normal(0.0, 0.2, size=(n, 4))
    return features, geo, labels, targets


def full_model_gradcheck(config: RunConfig = TINY, n: int = 6, seed: int = 0):
    """Analytic vs central-difference gradients of the base objective for all trainable tensors."""
    params = init_params(config, config.n_base, seed)
    names = trainable_names(params, config, "base")
    features, geo, labels, targets = random_batch(config, n, seed)

    def run(values):
        tape = Tape()
        p = leaves(tape, {**params, **values}, names)
        fw = forward(tape, p, features, geo, config)
        return tape, p, loss_base(fw.out, labels, targets).total

    tape, p, loss = run({})
    grads = tape.backward(loss)
    analytic = {n_: grads[p[n_]] for n_ in names}
    numeric = nx.finite_difference(lambda v: float(run(v)[2].value[0, 0]), {n_: params[n_] for n_ in names})
    return nx.compare_gradients(analytic, numeric)


# --- AP oracle ---------------------------------------------------------------


def iou_ref(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def reference_ap(dets, scenes, category, thresh):
    """Brute force: greedy matching with explicit loops, then every prefix of
    the ranking as a PR point and the precision envelope over those points."""
    dets = sorted(dets, key=lambda d: -d.confidence)
    gts = {s: [tuple(b) for b, c in zip(sc.boxes, sc.cats) if c == category] for s, sc in enumerate(scenes)}
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return math.nan
    used = {s: [False] * len(v) for s, v in gts.items()}
    flags = []
    for d in dets:
        best, best_iou = -1, -1.0
        for g, box in enumerate(gts[d.scene]):
            if used[d.scene][g]:
                continue
            v = iou_ref(d.box, box)
            if v >= thresh and v > best_iou:
                best, best_iou = g, v
        if best >= 0:
            used[d.scene][best] = True
        flags.append(best >= 0)
    points = []
    for cut in range(1, len(flags) + 1):
        tp = sum(flags[:cut])
        points.append((tp / n_gt, tp / cut))
    ap, prev_r = 0.0, 0.0
    for r in sorted({r for r, _ in points}):
        p = max(pp for rr, pp in points if rr >= r)
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def make_det(scene, conf, box, cat=1):
    return Detection(scene, cat, conf, tuple(float(v) for v in box))


CANDIDATES = [(0, 0, 10, 10), (1, 1, 11, 11), (4, 0, 14, 10), (0, 0, 10, 20), (30, 30, 40, 40),
              (31, 30, 41, 40), (60, 60, 70, 75), (2, 2, 9, 9)]


def random_ap_case(rng):
    """Up to two scenes with at most 3 GT each and at most 4 detections."""
    n_scenes = int(rng.integers(1, 3))
    scenes = []
    for _ in range(n_scenes):
        n_gt = int(rng.integers(0, 4))
        idx = rng.choice(len(CANDIDATES), size=n_gt, replace=False)
        cats = rng.integers(1, 3, size=n_gt)
        boxes = np.array([CANDIDATES[i] for i in idx], dtype=float).reshape(-1, 4)
        scenes.append(Scene(ImageDims(100.0, 100.0), cats, boxes))
    n_det = int(rng.integers(0, 5))
    confs = rng.permutation(np.linspace(0.1, 0.9, 9))[:n_det]
    dets = [make_det(int(rng.integers(0, n_scenes)), float(c), CANDIDATES[int(rng.integers(len(CANDIDATES)))],
                 int(rng.integers(1, 3))) for c in confs]
    return dets, scenes
