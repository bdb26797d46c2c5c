"""Synthetic detection world with planted category co-occurrence.

Stands in for backbone, RPN and datasets.  Category ids are 1-based:
``1..n_base`` are base categories, ``n_base+1..n_base+n_novel`` novel ones,
and 0 is background.  Every novel prototype is a convex mixture of two or
three base prototypes plus a small perturbation, so a detector trained on
base data confuses novel objects with their parents.

All randomness flows through :func:`stream`, a Philox generator keyed by
``(seed, purpose tag, index...)``; regenerating any piece reproduces it
bit for bit.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import RunConfig
from .geometry import ImageDims, box_targets, clip_to_image, encode_boxes, iou_matrix

BACKGROUND = 0
POSITIVE_IOU = 0.5


class GenerationError(RuntimeError):
    """Scene or split generation could not satisfy its constraints."""


def stream(seed: int, tag: str, *index: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode("utf-8"))] + [int(i) for i in index]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


# ---------------------------------------------------------------------------
# categories


@dataclass
class CategorySpace:
    n_base: int
    n_novel: int
    prototypes: np.ndarray  # (1 + C) x d, row 0 = background
    affinity: np.ndarray  # C x C, indexed by category id - 1
    novel_mixture: dict[int, tuple[tuple[int, ...], tuple[float, ...]]]
    size_direction: np.ndarray
    groups: tuple[int, ...] = ()

    @property
    def d(self) -> int:
        return self.prototypes.shape[1]

    @property
    def n_categories(self) -> int:
        return self.n_base + self.n_novel

    @property
    def base_ids(self) -> list[int]:
        return list(range(1, self.n_base + 1))

    @property
    def novel_ids(self) -> list[int]:
        return list(range(self.n_base + 1, self.n_categories + 1))

    @property
    def all_ids(self) -> list[int]:
        return list(range(1, self.n_categories + 1))

    def is_novel(self, cat: int) -> bool:
        return cat > self.n_base

    def to_json(self) -> dict:
        return {
            "n_base": self.n_base,
            "n_novel": self.n_novel,
            "d": self.d,
            "background": self.prototypes[0].tolist(),
            "prototypes": self.prototypes[1:].tolist(),
            "affinity": self.affinity.tolist(),
            "novel_mixture": {
                str(k): {"parents": list(p), "weights": list(w)}
                for k, (p, w) in sorted(self.novel_mixture.items())
            },
            "size_direction": self.size_direction.tolist(),
            "groups": list(self.groups),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CategorySpace":
        protos = np.array([doc["background"]] + doc["prototypes"], dtype=np.float64)
        return cls(
            n_base=int(doc["n_base"]),
            n_novel=int(doc["n_novel"]),
            prototypes=protos,
            affinity=np.array(doc["affinity"], dtype=np.float64),
            novel_mixture={
                int(k): (tuple(int(p) for p in v["parents"]), tuple(float(w) for w in v["weights"]))
                for k, v in doc["novel_mixture"].items()
            },
            size_direction=np.array(doc["size_direction"], dtype=np.float64),
            groups=tuple(int(g) for g in doc.get("groups", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CategorySpace":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def mix_prototype(base_protos: np.ndarray, weights: Sequence[float],
                  perturbation: np.ndarray | None = None) -> np.ndarray:
    """Convex combination of ``base_protos`` rows plus an optional offset."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) != len(base_protos) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    out = w @ np.asarray(base_protos, dtype=np.float64)
    if perturbation is not None:
        out = out + perturbation
    return out


def build_category_space(config: RunConfig, seed: int | None = None) -> CategorySpace:
    """Prototypes, planted block affinity and novel-from-base mixtures."""
    seed = config.seed if seed is None else seed
    nb, nn, d = config.n_base, config.n_novel, config.d
    if nb < 2 or nn < 1 or d < 8:
        raise ValueError("need n_base >= 2, n_novel >= 1 and d >= 8")
    rng = stream(seed, "category-space")
    C = nb + nn
    protos = np.zeros((C + 1, d))
    protos[0] = _unit(rng, d)
    for c in range(1, nb + 1):
        protos[c] = _unit(rng, d)

    n_groups = min(config.n_groups, nb)
    groups = np.zeros(C + 1, dtype=np.int64)
    order = rng.permutation(nb) + 1
    for i, c in enumerate(order):
        groups[c] = i % n_groups

    mixture = {}
    for c in range(nb + 1, C + 1):
        n_par = int(rng.integers(2, 4)) if nb >= 3 else 2
        parents = tuple(sorted(int(p) for p in rng.choice(np.arange(1, nb + 1), size=n_par, replace=False)))
        weights = rng.dirichlet(np.ones(n_par))
        pert = _unit(rng, d) * rng.uniform(0.0, config.perturb)
        protos[c] = mix_prototype(protos[list(parents)], weights, pert)
        mixture[c] = (parents, tuple(float(w) for w in weights))
        # place the novel category in a group none of its parents belong to
        parent_groups = {int(groups[p]) for p in parents}
        free = [g for g in range(n_groups) if g not in parent_groups]
        groups[c] = int(rng.choice(free)) if free else int(rng.integers(n_groups))

    aff = np.full((C, C), config.affinity_out)
    same = groups[1:, None] == groups[None, 1:]
    aff[same] = config.affinity_in
    np.fill_diagonal(aff, config.affinity_self)
    return CategorySpace(
        n_base=nb, n_novel=nn, prototypes=protos, affinity=aff,
        novel_mixture=mixture, size_direction=_unit(rng, d),
        groups=tuple(int(g) for g in groups[1:]),
    )


# ---------------------------------------------------------------------------
# scenes


@dataclass
class Scene:
    img: ImageDims
    cats: np.ndarray  # S int category ids
    boxes: np.ndarray  # S x 4

    @property
    def objects(self) -> list[tuple[int, tuple[float, float, float, float]]]:
        return [(int(c), tuple(float(v) for v in b)) for c, b in zip(self.cats, self.boxes)]

    @property
    def n_objects(self) -> int:
        return len(self.cats)

    def to_json(self) -> dict:
        return {
            "img_w": float(self.img.w_img),
            "img_h": float(self.img.h_img),
            "objects": [
                {"cat": int(c), "x_min": float(b[0]), "y_min": float(b[1]),
                 "x_max": float(b[2]), "y_max": float(b[3])}
                for c, b in zip(self.cats, self.boxes)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Scene":
        objs = doc["objects"]
        return cls(
            img=ImageDims(float(doc["img_w"]), float(doc["img_h"])),
            cats=np.array([int(o["cat"]) for o in objs], dtype=np.int64),
            boxes=np.array([[o["x_min"], o["y_min"], o["x_max"], o["y_max"]] for o in objs],
                           dtype=np.float64).reshape(-1, 4),
        )

    def subset(self, keep: Sequence[int]) -> "Scene":
        keep = list(keep)
        return Scene(self.img, self.cats[keep].copy(), self.boxes[keep].copy())


def _place_box(img: ImageDims, config: RunConfig, rng, placed: np.ndarray, retries=50):
    W, H = img
    for _ in range(retries):
        w = rng.uniform(config.obj_min_frac, config.obj_max_frac) * W
        h = rng.uniform(config.obj_min_frac, config.obj_max_frac) * H
        x = rng.uniform(0.0, W - w)
        y = rng.uniform(0.0, H - h)
        box = np.array([x, y, x + w, y + h])
        if len(placed) == 0 or iou_matrix(box[None], placed).max() <= config.overlap_cap:
            return box
    return None


def sample_scene(space: CategorySpace, config: RunConfig, rng: np.random.Generator,
                 first: int | None = None, allowed: Iterable[int] | None = None,
                 max_attempts: int = 100) -> Scene:
    """Draw one scene; categories after the first follow the affinity."""
    ids = np.array(sorted(allowed) if allowed is not None else space.all_ids, dtype=np.int64)
    for _ in range(max_attempts):
        W = rng.uniform(config.img_min, config.img_max)
        H = rng.uniform(config.img_min, config.img_max)
        img = ImageDims(W, H)
        n = int(rng.integers(config.min_objects, config.max_objects + 1))
        cats = [int(first) if first is not None else int(rng.choice(ids))]
        while len(cats) < n:
            weight = space.affinity[ids[:, None] - 1, np.array(cats)[None, :] - 1].sum(axis=1)
            if weight.sum() <= 0:
                break
            cats.append(int(rng.choice(ids, p=weight / weight.sum())))
        boxes = np.zeros((0, 4))
        ok = True
        for _c in cats:
            box = _place_box(img, config, rng, boxes)
            if box is None:
                ok = False
                break
            boxes = np.vstack([boxes, box])
        if ok:
            return Scene(img, np.array(cats, dtype=np.int64), boxes)
    raise GenerationError("could not place objects under the overlap cap")


# ---------------------------------------------------------------------------
# proposals


@dataclass
class RoIBatch:
    img: ImageDims
    boxes: np.ndarray  # N x 4
    features: np.ndarray  # N x d
    labels: np.ndarray  # N, 0 = background
    targets: np.ndarray  # N x 4, zero rows for background
    geo: np.ndarray  # N x 6 box encodings
    gt_index: np.ndarray  # N, matched object or -1

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def positive(self) -> np.ndarray:
        return self.labels != BACKGROUND


def proposal_features(space: CategorySpace, config: RunConfig, cats: np.ndarray,
                      boxes: np.ndarray, img: ImageDims, rng) -> np.ndarray:
    """Prototype plus a log-area term along the shared size direction plus noise."""
    W, H = img
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]) / (W * H)
    f = space.prototypes[cats] + config.gamma * np.log(area)[:, None] * space.size_direction[None, :]
    if config.sigma_f > 0:
        f = f + config.sigma_f * rng.standard_normal(f.shape)
    return f


def label_proposals(boxes: np.ndarray, scene: Scene):
    """Max-IoU assignment; returns (category per proposal, object index or -1)."""
    if scene.n_objects == 0:
        return np.zeros(len(boxes), dtype=np.int64), np.full(len(boxes), -1, dtype=np.int64)
    ious = iou_matrix(boxes, scene.boxes)
    best = ious.argmax(axis=1)
    pos = ious[np.arange(len(boxes)), best] >= POSITIVE_IOU
    gt_index = np.where(pos, best, -1)
    cats = np.where(pos, scene.cats[best], BACKGROUND)
    return cats.astype(np.int64), gt_index.astype(np.int64)


def propose_rois(scene: Scene, space: CategorySpace, config: RunConfig, rng: np.random.Generator,
                 visible: set[int] | None = None, jitter: bool = True) -> RoIBatch:
    """Jittered copies of every object plus random background boxes.

    ``visible`` restricts which categories keep their label; objects of other
    categories are labeled background but keep their own features.
    """
    img = scene.img
    W, H = img
    parts = []
    for box in scene.boxes:
        w, h = box[2] - box[0], box[3] - box[1]
        for _ in range(config.jitter_copies):
            if jitter and config.jitter_frac > 0:
                noise = rng.uniform(-config.jitter_frac, config.jitter_frac, size=4) * np.array([w, h, w, h])
            else:
                noise = np.zeros(4)
            parts.append(box + noise)
    for _ in range(config.n_bg):
        bw = rng.uniform(0.1, 0.5) * W
        bh = rng.uniform(0.1, 0.5) * H
        x = rng.uniform(0.0, W - bw)
        y = rng.uniform(0.0, H - bh)
        parts.append(np.array([x, y, x + bw, y + bh]))
    if not parts:
        raise GenerationError("scene produced no proposals")
    boxes = clip_to_image(np.array(parts), img)
    true_cats, gt_index = label_proposals(boxes, scene)
    feats = proposal_features(space, config, true_cats, boxes, img, rng)
    labels = true_cats.copy()
    if visible is not None:
        labels[~np.isin(labels, list(visible))] = BACKGROUND
        gt_index = np.where(labels == BACKGROUND, -1, gt_index)
    targets = np.zeros((len(boxes), 4))
    pos = labels != BACKGROUND
    if pos.any():
        targets[pos] = box_targets(boxes[pos], scene.boxes[gt_index[pos]])
    return RoIBatch(img, boxes, feats, labels, targets, encode_boxes(boxes, img), gt_index)


# ---------------------------------------------------------------------------
# splits


@dataclass
class SceneSet:
    """Scenes of one split plus the key material for regenerating proposals."""

    name: str
    scenes: list[Scene]
    seed: int
    visible: frozenset[int] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self):
        return len(self.scenes)

    def rois(self, i: int, space: CategorySpace, config: RunConfig) -> RoIBatch:
        if i not in self._cache:
            rng = stream(self.seed, f"rois/{self.name}", i)
            self._cache[i] = propose_rois(self.scenes[i], space, config, rng, visible=self.visible)
        return self._cache[i]

    def category_counts(self, n_categories: int) -> np.ndarray:
        counts = np.zeros(n_categories + 1, dtype=np.int64)
        for s in self.scenes:
            np.add.at(counts, s.cats, 1)
        return counts

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.scenes:
                fh.write(json.dumps(s.to_json()) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path, name: str, seed: int,
                   visible: Iterable[int] | None = None) -> "SceneSet":
        scenes = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    scenes.append(Scene.from_json(json.loads(line)))
        return cls(name, scenes, seed, frozenset(visible) if visible is not None else None)


@dataclass
class Splits:
    base: SceneSet
    fewshot: SceneSet
    test: SceneSet
    k: int


def sample_fewshot(space: CategorySpace, config: RunConfig, k: int, seed: int,
                   budget: int | None = None) -> SceneSet:
    """Scenes holding exactly ``k`` instances of every category.

    Each draw starts from the least-covered category; objects whose category
    is already full are removed from the drawn scene.
    """
    rng = stream(seed, "fewshot", k)
    C = space.n_categories
    counts = np.zeros(C + 1, dtype=np.int64)
    scenes: list[Scene] = []
    budget = budget or 50 * C * k
    for _ in range(budget):
        need = [c for c in space.all_ids if counts[c] < k]
        if not need:
            return SceneSet(f"fewshot{k}", scenes, seed)
        low = min(counts[c] for c in need)
        first = int(rng.choice([c for c in need if counts[c] == low]))
        scene = sample_scene(space, config, rng, first=first)
        keep, local = [], counts.copy()
        for j, c in enumerate(scene.cats):
            if local[c] < k:
                keep.append(j)
                local[c] += 1
        if keep:
            counts = local
            scenes.append(scene.subset(keep))
    raise GenerationError(f"could not collect {k} instances per category in {budget} scenes")


def make_splits(space: CategorySpace, config: RunConfig, seed: int | None = None,
                k: int | None = None) -> Splits:
    seed = config.seed if seed is None else seed
    k = config.k if k is None else k
    rng = stream(seed, "base-scenes")
    base_ids = set(space.base_ids)
    base = [sample_scene(space, config, rng, allowed=base_ids) for _ in range(config.n_base_scenes)]
    rng = stream(seed, "test-scenes")
    test = [sample_scene(space, config, rng) for _ in range(config.n_test_scenes)]
    return Splits(
        base=SceneSet("base", base, seed, visible=frozenset(base_ids)),
        fewshot=sample_fewshot(space, config, k, seed),
        test=SceneSet("test", test, seed),
        k=k,
    )


# ---------------------------------------------------------------------------
# feature-noise calibration


def _fit_softmax(x, y, n_cls, steps=300, lr=0.5, l2=1e-3):
    W = np.zeros((x.shape[1] + 1, n_cls))
    xb = np.hstack([x, np.ones((len(x), 1))])
    onehot = np.eye(n_cls)[y]
    for _ in range(steps):
        logits = xb @ W
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        W -= lr * (xb.T @ (p - onehot) / len(x) + l2 * W)
    return W


def isolated_accuracy(space: CategorySpace, config: RunConfig, sigma: float, seed: int = 0,
                      k: int = 5, n_test: int = 400, repeats: int = 10) -> float:
    """Accuracy of a softmax-linear classifier fit on ``k`` isolated features
    per novel category and scored on fresh novel features, averaged over
    ``repeats`` independently drawn training sets."""
    rng = stream(seed, "calibrate", int(round(sigma * 1e6)))
    cfg = config.replace(sigma_f=sigma)
    novel = np.asarray(space.novel_ids, dtype=np.int64)

    def draw(cats):
        img = ImageDims(100.0, 100.0)
        side = rng.uniform(config.obj_min_frac, config.obj_max_frac, size=(len(cats), 2)) * 100.0
        boxes = np.hstack([np.zeros((len(cats), 2)), side])
        return proposal_features(space, cfg, cats, boxes, img, rng)

    train_idx = np.repeat(np.arange(len(novel)), k)
    hits = []
    for _ in range(repeats):
        test_idx = rng.integers(0, len(novel), size=n_test)
        W = _fit_softmax(draw(novel[train_idx]), train_idx, len(novel))
        xt = draw(novel[test_idx])
        pred = (np.hstack([xt, np.ones((len(xt), 1))]) @ W).argmax(axis=1)
        hits.append(np.mean(pred == test_idx))
    return float(np.mean(hits))


def calibrate_sigma(space: CategorySpace, config: RunConfig, sigmas: Sequence[float] | None = None,
                    seed: int = 0, low: float = 0.55, high: float = 0.75):
    """Sweep the feature noise and return the midpoint of the band where
    isolated novel accuracy lies in ``[low, high]``, plus the sweep table."""
    if sigmas is None:
        sigmas = np.round(np.arange(0.05, 1.0001, 0.01), 4)
    table = [(float(s), isolated_accuracy(space, config, float(s), seed)) for s in sigmas]
    inside = [s for s, a in table if low <= a <= high]
    if inside:
        return round(0.5 * (min(inside) + max(inside)), 6), table
    target = 0.5 * (low + high)
    return min(table, key=lambda t: abs(t[1] - target))[0], table
