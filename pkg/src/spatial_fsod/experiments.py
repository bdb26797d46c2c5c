"""Seeded end-to-end runs and the ablation grids built on them."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .config import RunConfig
from .evaluation import MetricReport, evaluate
from .scenegen import CategorySpace, SceneSet, build_category_space, make_splits, sample_fewshot
from .train import base_train, finetune, replace_classifier

log = logging.getLogger(__name__)


@dataclass
class World:
    config: RunConfig
    seed: int
    space: CategorySpace
    base: SceneSet
    test: SceneSet
    fewshot: dict[int, SceneSet]

    def shots(self, k: int) -> SceneSet:
        if k not in self.fewshot:
            self.fewshot[k] = sample_fewshot(self.space, self.config, k, self.seed)
        return self.fewshot[k]


def build_world(config: RunConfig, seed: int) -> World:
    cfg = config.replace(seed=seed)
    space = build_category_space(cfg, seed)
    splits = make_splits(space, cfg, seed)
    return World(cfg, seed, space, splits.base, splits.test, {splits.k: splits.fewshot})


@dataclass
class RunResult:
    variant: str
    seed: int
    k: int
    report: MetricReport

    def row(self, ablation: str) -> dict[str, str]:
        r = self.report
        return {"ablation": ablation, "variant": self.variant, "seed": str(self.seed), "k": str(self.k),
                "nAP50": f"{r.nAP50:.6f}", "bAP50": f"{r.bAP50:.6f}", "mAP50": f"{r.mAP50:.6f}"}


class Runner:
    """Caches base checkpoints per (seed, model-shaping options)."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.worlds: dict[int, World] = {}
        self.bases: dict[tuple, Checkpoint] = {}

    def world(self, seed: int) -> World:
        if seed not in self.worlds:
            self.worlds[seed] = build_world(self.config, seed)
        return self.worlds[seed]

    def base(self, seed: int, cfg: RunConfig) -> Checkpoint:
        key = (seed, cfg.reasoning, cfg.edge_mode, cfg.edge_embed)
        if key not in self.bases:
            w = self.world(seed)
            log.info("base training seed=%d reasoning=%s edge=%s/%s", seed, cfg.reasoning,
                     cfg.edge_mode, cfg.edge_embed)
            self.bases[key], _ = base_train(w.space, w.base, cfg.replace(seed=seed), seed)
        return self.bases[key]

    def base_report(self, seed: int, cfg: RunConfig) -> MetricReport:
        w = self.world(seed)
        return evaluate(self.base(seed, cfg), w.space, w.test, cfg.replace(seed=seed))

    def finetuned(self, seed: int, cfg: RunConfig, k: int) -> Checkpoint:
        w = self.world(seed)
        cfg = cfg.replace(seed=seed, k=k)
        ckpt = replace_classifier(self.base(seed, cfg), w.space.novel_ids, cfg, seed)
        out, _ = finetune(ckpt, w.space, w.shots(k), cfg, seed)
        return out

    def run(self, variant: str, seed: int, cfg: RunConfig, k: int) -> RunResult:
        w = self.world(seed)
        ckpt = self.finetuned(seed, cfg, k)
        report = evaluate(ckpt, w.space, w.test, cfg.replace(seed=seed, k=k))
        log.info("%s seed=%d k=%d nAP50=%.4f bAP50=%.4f", variant, seed, k, report.nAP50, report.bAP50)
        return RunResult(variant, seed, k, report)


def component_variants(config: RunConfig) -> dict[str, RunConfig]:
    return {
        "baseline": config.replace(reasoning=False, T=0),
        "aug_only": config.replace(reasoning=False),
        "reasoning_only": config.replace(reasoning=True, T=0),
        "reasoning_aug": config.replace(reasoning=True),
    }


def edge_variants(config: RunConfig) -> dict[str, RunConfig]:
    return {
        f"{embed}_{mode}": config.replace(reasoning=True, edge_embed=embed, edge_mode=mode)
        for embed in ("fc", "aux") for mode in ("dense", "sparse")
    }


def sweep_variants(config: RunConfig) -> dict[str, RunConfig]:
    return {f"T={t}": config.replace(T=t) for t in config.sweep_T}


def restriction_variants(config: RunConfig) -> dict[str, RunConfig]:
    return {"unrestricted": config.replace(restrict=False), "restricted": config.replace(restrict=True)}


ABLATIONS = {
    "reasoning_x_augmentation": component_variants,
    "augment_T_sweep": sweep_variants,
    "edge_design": edge_variants,
    "resize_restriction": restriction_variants,
}


def run_grid(runner: Runner, variants: dict[str, RunConfig], seeds: Sequence[int], ks: Sequence[int],
             ) -> list[RunResult]:
    return [runner.run(name, seed, cfg, k) for seed in seeds for k in ks for name, cfg in variants.items()]


CSV_FIELDS = ["ablation", "variant", "seed", "k", "nAP50", "bAP50", "mAP50"]


def grid_rows(ablation: str, results: list[RunResult]) -> list[dict[str, str]]:
    """Per-seed rows; a ``mean`` row per (variant, k) is added when more than one seed ran."""
    rows = [r.row(ablation) for r in results]
    if len({r.seed for r in results}) > 1:
        keys = list(dict.fromkeys((r.variant, r.k) for r in results))
        for variant, k in keys:
            sel = [r.report for r in results if r.variant == variant and r.k == k]
            rows.append({"ablation": ablation, "variant": variant, "seed": "mean", "k": str(k),
                         "nAP50": f"{np.mean([s.nAP50 for s in sel]):.6f}",
                         "bAP50": f"{np.mean([s.bAP50 for s in sel]):.6f}",
                         "mAP50": f"{np.mean([s.mAP50 for s in sel]):.6f}"})
    return rows


def write_rows(path: str | Path, rows: Iterable[dict[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# directional benchmark


@dataclass
class BenchmarkOutcome:
    results: list[RunResult]
    base_bap: dict[tuple[int, bool], float]

    def nap(self, variant: str, k: int) -> np.ndarray:
        rs = sorted((r for r in self.results if r.variant == variant and r.k == k), key=lambda r: r.seed)
        return np.array([r.report.nAP50 for r in rs])

    def reasoning_wins(self, k: int, with_aug: bool = False) -> tuple[bool, int, float, float]:
        on = self.nap("reasoning_aug" if with_aug else "reasoning_only", k)
        off = self.nap("aug_only" if with_aug else "baseline", k)
        wins = int(np.sum(on > off))
        return bool(on.mean() > off.mean() and wins >= int(np.ceil(0.8 * len(on)))), wins, on.mean(), off.mean()

    def augmentation_helps(self, k: int) -> tuple[bool, float, float]:
        with_aug = self.nap("reasoning_aug", k).mean()
        without = self.nap("reasoning_only", k).mean()
        return bool(with_aug > without), with_aug, without

    def max_base_drift(self) -> float:
        worst = 0.0
        for r in self.results:
            reasoning = r.variant.startswith("reasoning")
            worst = max(worst, abs(r.report.bAP50 - self.base_bap[(r.seed, reasoning)]))
        return worst


def directional_benchmark(config: RunConfig, seeds: Sequence[int] = (0, 1, 2, 3, 4),
                          ks: Sequence[int] = (1, 5), runner: Runner | None = None) -> BenchmarkOutcome:
    runner = runner or Runner(config)
    variants = component_variants(config)
    results = run_grid(runner, variants, seeds, ks)
    base_bap = {}
    for seed in seeds:
        for reasoning in (False, True):
            base_bap[(seed, reasoning)] = runner.base_report(seed, config.replace(reasoning=reasoning)).bAP50
    return BenchmarkOutcome(results, base_bap)


# ---------------------------------------------------------------------------
# auxiliary-classifier view of novel objects


@dataclass
class ParentHit:
    novel: int
    top_base: int
    parents: tuple[int, ...]
    mean_distribution: np.ndarray  # over background + base categories

    @property
    def hit(self) -> bool:
        return self.top_base in self.parents


def novel_parent_hits(ckpt: Checkpoint, space: CategorySpace, data: SceneSet,
                      config: RunConfig) -> list[ParentHit]:
    """For each novel category, average the auxiliary class distribution over
    its positive proposals and find the base category with the most mass."""
    from .model import aux_distribution

    sums = {c: np.zeros(1 + space.n_base) for c in space.novel_ids}
    counts = dict.fromkeys(space.novel_ids, 0)
    for i in range(len(data)):
        roi = data.rois(i, space, config)
        probs = aux_distribution(ckpt.tensors, roi.features)
        for c in space.novel_ids:
            rows = roi.labels == c
            if rows.any():
                sums[c] += probs[rows].sum(axis=0)
                counts[c] += int(rows.sum())
    out = []
    for c in space.novel_ids:
        mean = sums[c] / max(counts[c], 1)
        top = space.base_ids[int(np.argmax(mean[1:]))]
        out.append(ParentHit(c, top, tuple(space.novel_mixture[c][0]), mean))
    return out
