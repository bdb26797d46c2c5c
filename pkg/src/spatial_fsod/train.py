"""Two-phase optimization: base training, classifier replacement, k-shot fine-tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .augment import augment_scene
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig
from .heads import loss_base, loss_finetune
from .model import (ALPHA_NAME, MAIN_NAME, forward, heads_forward, initial_checkpoint, leaves,
                    enhanced_features, trainable_names)
from .numerics import NumericError, Tape
from .scenegen import CategorySpace, RoIBatch, SceneSet, propose_rois, stream

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    """Loss or parameters became non-finite."""


class DataError(ValueError):
    """Training data violates a precondition."""


class SGD:
    """SGD with momentum and L2 weight decay folded into the gradient.

    ``buf = momentum * buf + (grad + decay * param)``; ``param -= lr * buf``.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            p = params[name]
            d = g + self.weight_decay * p if self.weight_decay else g
            buf = self.buffers.get(name)
            buf = d.copy() if buf is None else self.momentum * buf + d
            self.buffers[name] = buf
            params[name] = p - lr * buf


def lr_steps(schedule) -> Iterator[float]:
    for steps, lr in schedule:
        for _ in range(steps):
            yield lr


def total_steps(schedule) -> int:
    return sum(s for s, _ in schedule)


@dataclass
class History:
    losses: list[float] = field(default_factory=list)
    components: list[dict[str, float]] = field(default_factory=list)


def _order(seed: int, tag: str, n: int, batch: int) -> Iterator[list[int]]:
    """Endless stream of batches; each epoch is a fresh keyed permutation."""
    epoch = 0
    while True:
        perm = stream(seed, tag, epoch).permutation(n)
        for i in range(0, n, batch):
            yield [int(j) for j in perm[i:i + batch]]
        epoch += 1


def _finite_or_raise(step: int, loss: float, params: dict[str, np.ndarray]) -> None:
    if not np.isfinite(loss):
        raise TrainingDivergence(f"loss became {loss} at step {step}")
    for name, arr in params.items():
        if not np.isfinite(arr).all():
            raise TrainingDivergence(f"tensor {name} became non-finite at step {step}")


def base_loss_value(tensors: dict[str, np.ndarray], roi: RoIBatch, config: RunConfig) -> float:
    tape = Tape()
    p = leaves(tape, tensors)
    fw = forward(tape, p, roi.features, roi.geo, config)
    return float(loss_base(fw.out, roi.labels, roi.targets).total.value[0, 0])


def base_gradients(tensors: dict[str, np.ndarray], roi: RoIBatch, config: RunConfig,
                   names: list[str]) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    tape = Tape()
    p = leaves(tape, tensors, names)
    fw = forward(tape, p, roi.features, roi.geo, config)
    terms = loss_base(fw.out, roi.labels, roi.targets)
    grads = tape.backward(terms.total)
    return float(terms.total.value[0, 0]), {t.name: g for t, g in grads.items()}, terms.values()


def base_train(space: CategorySpace, data: SceneSet, config: RunConfig, seed: int | None = None,
               callback: Callable[[int, float], None] | None = None) -> tuple[Checkpoint, History]:
    """Minimize detection + auxiliary loss over every parameter on base data."""
    seed = config.seed if seed is None else seed
    for s in data.scenes:
        if np.any(s.cats > space.n_base):
            raise DataError("base dataset contains novel-category objects")
    ckpt = initial_checkpoint(config, space.base_ids, seed)
    params = dict(ckpt.tensors)
    names = trainable_names(params, config, "base")
    opt = SGD(config.momentum, config.weight_decay)
    hist = History()
    batches = _order(seed, "base-order", len(data), config.batch_size)
    for step, lr in enumerate(lr_steps(config.base_schedule)):
        idx = next(batches)
        acc = {n: np.zeros_like(params[n]) for n in names}
        total = 0.0
        try:
            for i in idx:
                loss, grads, _ = base_gradients(params, data.rois(i, space, config), config, names)
                total += loss
                for n in names:
                    acc[n] += grads[n]
        except NumericError as exc:
            raise TrainingDivergence(f"step {step}: {exc}") from exc
        scale = 1.0 / len(idx)
        opt.step(params, {n: g * scale for n, g in acc.items()}, lr)
        total *= scale
        _finite_or_raise(step, total, params)
        hist.losses.append(total)
        if callback:
            callback(step, total)
    out = ckpt.copy(tensors=params, phase="base", config=config.to_dict())
    return out, hist


def replace_classifier(ckpt: Checkpoint, novel_ids: list[int], config: RunConfig,
                       seed: int | None = None) -> Checkpoint:
    """Grow the main classifier by one row per novel category.

    Background and base rows are copied; novel rows start as small Gaussians.
    """
    if ckpt.phase != "base":
        raise CheckpointError(f"classifier replacement needs a base checkpoint, got phase {ckpt.phase!r}")
    novel_ids = list(novel_ids)
    if len(set(novel_ids)) != len(novel_ids) or set(novel_ids) & set(ckpt.active_ids):
        raise CheckpointError("novel category ids overlap the registry")
    seed = config.seed if seed is None else seed
    old = ckpt.tensors[MAIN_NAME]
    rng = stream(seed, "novel-rows")
    new_rows = rng.standard_normal((len(novel_ids), old.shape[1])) * config.novel_init_std
    tensors = {k: v.copy() for k, v in ckpt.tensors.items()}
    tensors[MAIN_NAME] = np.vstack([old, new_rows]) if novel_ids else old.copy()
    return ckpt.copy(tensors=tensors, novel_ids=list(ckpt.novel_ids) + novel_ids)


@dataclass
class _Sample:
    roi: RoIBatch
    e: np.ndarray | None  # cached enhanced features when the embedding is frozen


class _AugmentPool:
    """Per scene, a batch of augmented variants consumed one per visit and
    redrawn once exhausted."""

    def __init__(self, space, data: SceneSet, tensors, config: RunConfig, seed: int, cache_e: bool):
        self.space, self.data, self.tensors = space, data, tensors
        self.config, self.seed, self.cache_e = config, seed, cache_e
        self.queues: dict[int, list] = {}
        self.rounds: dict[int, int] = {}

    def next(self, i: int) -> _Sample | None:
        cfg = self.config
        if cfg.T == 0:
            return None
        q = self.queues.get(i)
        while not q:
            r = self.rounds.get(i, 0)
            self.rounds[i] = r + 1
            scene = self.data.scenes[i]
            augs = augment_scene(scene, cfg.T, stream(self.seed, "augment", i, r), cfg.aug_cap, cfg.restrict)
            q = [(r, a) for a in augs]
            if not q and scene.n_objects == 0:
                return None
        self.queues[i] = q
        r, aug = q.pop(0)
        roi = propose_rois(aug.scene, self.space, cfg, stream(self.seed, "rois/augment", i, r, aug.combination))
        e = enhanced_features(self.tensors, roi.features, roi.geo, cfg) if self.cache_e else None
        return _Sample(roi, e)


def finetune(ckpt: Checkpoint, space: CategorySpace, data: SceneSet, config: RunConfig,
             seed: int | None = None,
             callback: Callable[[int, float], None] | None = None) -> tuple[Checkpoint, History]:
    """k-shot fine-tuning on original plus augmented scenes.

    Only the tensors named by :func:`trainable_names` for the ``finetune``
    phase move; everything else is returned bit-identical.
    """
    if ckpt.phase != "base":
        raise CheckpointError(f"fine-tuning needs a base checkpoint, got phase {ckpt.phase!r}")
    if not ckpt.novel_ids:
        raise CheckpointError("replace the classifier before fine-tuning")
    seed = config.seed if seed is None else seed
    counts = data.category_counts(space.n_categories)
    missing = [c for c in ckpt.active_ids if counts[c] == 0]
    if missing:
        raise DataError(f"few-shot set has no instances of categories {missing}")

    params = {k: v.copy() for k, v in ckpt.tensors.items()}
    names = trainable_names(params, config, "finetune")
    frozen_embed = not any(n.startswith(("gcn.", "edge.")) or n == "head.aux_W" for n in names)
    alpha = float(params[ALPHA_NAME][0, 0])
    originals = []
    for i in range(len(data)):
        roi = data.rois(i, space, config)
        e = enhanced_features(params, roi.features, roi.geo, config) if frozen_embed else None
        originals.append(_Sample(roi, e))
    pool = _AugmentPool(space, data, ckpt.tensors, config, seed, frozen_embed)

    opt = SGD(config.momentum, config.weight_decay)
    hist = History()
    batches = _order(seed, "finetune-order", len(data), config.batch_size)
    for step, lr in enumerate(lr_steps(config.finetune_schedule)):
        idx = next(batches)
        acc = {n: np.zeros_like(params[n]) for n in names}
        total = 0.0
        try:
            for i in idx:
                aug = pool.next(i)
                loss, grads = _finetune_gradients(params, names, originals[i], aug, config, alpha)
                total += loss
                for n in names:
                    acc[n] += grads[n]
        except NumericError as exc:
            raise TrainingDivergence(f"step {step}: {exc}") from exc
        scale = 1.0 / len(idx)
        opt.step(params, {n: g * scale for n, g in acc.items()}, lr)
        total *= scale
        _finite_or_raise(step, total, params)
        hist.losses.append(total)
        if callback:
            callback(step, total)
    out = ckpt.copy(tensors=params, phase="finetuned", config=config.to_dict())
    return out, hist


def _sample_output(tape: Tape, p, sample: _Sample, config: RunConfig, alpha: float):
    if sample.e is not None:
        out = heads_forward(p, tape.constant(sample.e), alpha)
    else:
        out = forward(tape, p, sample.roi.features, sample.roi.geo, config).out
    return out, sample.roi.labels, sample.roi.targets


def finetune_objective(params, names, original: _Sample, augmented: list[_Sample],
                       config: RunConfig, alpha: float):
    tape = Tape()
    p = leaves(tape, params, names)
    orig = _sample_output(tape, p, original, config, alpha)
    augs = [_sample_output(tape, p, a, config, alpha) for a in augmented]
    return tape, loss_finetune(orig, augs)


def _finetune_gradients(params, names, original, aug, config, alpha):
    tape, terms = finetune_objective(params, names, original, [aug] if aug else [], config, alpha)
    grads = tape.backward(terms.total)
    return float(terms.total.value[0, 0]), {t.name: g for t, g in grads.items()}


__all__ = ["SGD", "base_train", "replace_classifier", "finetune", "History", "TrainingDivergence",
           "DataError", "base_loss_value", "base_gradients", "finetune_objective"]
