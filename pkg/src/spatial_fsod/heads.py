"""Detection heads and losses.

* auxiliary classifier: softmax over background + base categories,
* main classifier: alpha-scaled cosine similarity against per-category weights,
* one box regressor shared by all categories.

Classification CE is averaged over all proposals; smooth-L1 box loss is
summed over the four offsets and averaged over positive proposals only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor

log = logging.getLogger(__name__)

SMOOTH_L1_BETA = 1.0


@dataclass
class HeadParams:
    aux_W: Tensor  # d x (1 + n_base)
    main_W: Tensor  # (1 + active) x (d + q_out)
    reg_W: Tensor  # (d + q_out) x 4
    alpha: float = 20.0


@dataclass
class DetectionOutput:
    logits: Tensor  # N x (1 + active)
    offsets: Tensor  # N x 4
    aux_logits: Tensor | None = None


@dataclass
class LossTerms:
    total: Tensor
    main_ce: Tensor
    box: Tensor
    aux_ce: Tensor | None = None

    def values(self) -> dict[str, float]:
        out = {"total": float(self.total.value[0, 0]),
               "main_ce": float(self.main_ce.value[0, 0]),
               "box": float(self.box.value[0, 0])}
        if self.aux_ce is not None:
            out["aux_ce"] = float(self.aux_ce.value[0, 0])
        return out


def aux_logits(f: Tensor, aux_W: Tensor) -> Tensor:
    if f.cols != aux_W.rows:
        raise DimensionError(f"aux classifier: features {f.shape} vs weights {aux_W.shape}")
    return nx.matmul(f, aux_W)


def aux_classify(f: Tensor, aux_W: Tensor) -> Tensor:
    return nx.row_softmax(aux_logits(f, aux_W))


def zero_norm_rows(x: np.ndarray) -> np.ndarray:
    return np.flatnonzero(nx.row_norms(x)[:, 0] <= nx.NORM_FLOOR)


def cosine_scores(e: Tensor, main_W: Tensor, alpha: float) -> Tensor:
    if e.cols != main_W.cols:
        raise DimensionError(f"cosine_scores: features {e.shape} vs weights {main_W.shape}")
    for what, t in (("feature", e), ("classifier", main_W)):
        bad = zero_norm_rows(t.value)
        if bad.size:
            log.warning("cosine_scores: %d zero-norm %s rows floored at %g", bad.size, what, nx.NORM_FLOOR)
    en = nx.row_l2_normalize(e)
    wn = nx.row_l2_normalize(main_W)
    return nx.scale(nx.matmul(en, nx.transpose(wn)), alpha)


def regress_boxes(e: Tensor, reg_W: Tensor) -> Tensor:
    if e.cols != reg_W.rows:
        raise DimensionError(f"regress_boxes: features {e.shape} vs weights {reg_W.shape}")
    return nx.matmul(e, reg_W)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax at the ground-truth labels."""
    return nx.scale(nx.sum_all(nx.pick(nx.row_log_softmax(logits), labels)), -1.0 / logits.rows)


def box_loss(offsets: Tensor, targets: np.ndarray, positive: np.ndarray) -> Tensor:
    n_pos = int(np.count_nonzero(positive))
    tape = offsets.tape
    if n_pos == 0:
        return tape.constant(np.zeros((1, 1)))
    mask = tape.constant(np.repeat(positive.astype(np.float64)[:, None], 4, axis=1))
    diff = nx.sub(offsets, tape.constant(np.where(mask.value > 0, targets, 0.0)))
    per = nx.mul(nx.smooth_l1(diff, SMOOTH_L1_BETA), mask)
    return nx.scale(nx.sum_all(per), 1.0 / n_pos)


def detection_loss(out: DetectionOutput, labels: np.ndarray, targets: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """Main-classifier CE plus box loss; returns ``(sum, ce, box)``."""
    ce = cross_entropy(out.logits, labels)
    box = box_loss(out.offsets, targets, labels != 0)
    return nx.add(ce, box), ce, box


def loss_base(out: DetectionOutput, labels: np.ndarray, targets: np.ndarray) -> LossTerms:
    """Base-training objective: detection loss plus auxiliary CE."""
    if out.aux_logits is None:
        raise ValueError("base loss needs auxiliary logits")
    det, ce, box = detection_loss(out, labels, targets)
    aux = cross_entropy(out.aux_logits, labels)
    return LossTerms(nx.add(det, aux), ce, box, aux)


def loss_finetune(original: tuple[DetectionOutput, np.ndarray, np.ndarray],
                  augmented: list[tuple[DetectionOutput, np.ndarray, np.ndarray]]) -> LossTerms:
    """Fine-tuning objective: detection loss on the original scene plus the
    same loss on each augmented copy.  No auxiliary term."""
    total, ce, box = detection_loss(*original)
    for out, labels, targets in augmented:
        det_a, ce_a, box_a = detection_loss(out, labels, targets)
        total = nx.add(total, det_a)
        ce = nx.add(ce, ce_a)
        box = nx.add(box, box_a)
    return LossTerms(total, ce, box)
