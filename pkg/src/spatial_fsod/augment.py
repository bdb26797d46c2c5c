"""Image-level spatial augmentation.

Every object in a scene is resized ``T`` times; one augmented scene is
produced per element of the ``T ** S`` cross product of per-object choices
(sampled without replacement when that exceeds the cap).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import MIN_SIDE, Box, ImageDims, clip_to_image
from .scenegen import Scene

RESTRICTED = (2 ** -0.5, 2 ** 0.5)
UNRESTRICTED = (0.5, 2.0)


@dataclass
class AugmentedScene:
    base: Scene
    factors: np.ndarray  # S x 2 per-object (sx, sy)
    boxes: np.ndarray  # S x 4 resized and clamped
    combination: int  # index into the T**S cross product

    @property
    def scene(self) -> Scene:
        return Scene(self.base.img, self.base.cats.copy(), self.boxes.copy())


def resize_boxes(boxes: np.ndarray, factors: np.ndarray, img: ImageDims) -> np.ndarray:
    """Scale widths/heights about box centers, then clamp into the image."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    factors = np.asarray(factors, dtype=np.float64).reshape(-1, 2)
    cx = 0.5 * (boxes[:, 0] + boxes[:, 2])
    cy = 0.5 * (boxes[:, 1] + boxes[:, 3])
    hw = 0.5 * (boxes[:, 2] - boxes[:, 0]) * factors[:, 0]
    hh = 0.5 * (boxes[:, 3] - boxes[:, 1]) * factors[:, 1]
    out = np.stack([cx - hw, cy - hh, cx + hw, cy + hh], axis=1)
    return clip_to_image(out, img, MIN_SIDE)


def resize_region(box: Box, sx: float, sy: float, img: ImageDims) -> Box:
    return Box(*resize_boxes(np.array([box]), np.array([[sx, sy]]), img)[0])


def decode_combination(combo: int, T: int, S: int) -> tuple[int, ...]:
    """Per-object choice indices of a cross-product id (object 0 most significant)."""
    digits = []
    for _ in range(S):
        combo, r = divmod(combo, T)
        digits.append(r)
    return tuple(reversed(digits))


def augment_scene(scene: Scene, T: int, rng: np.random.Generator, cap: int = 16,
                  restrict: bool = True) -> list[AugmentedScene]:
    if T < 0:
        raise ValueError("T must be >= 0")
    S = scene.n_objects
    if T == 0 or S == 0:
        return []
    lo, hi = RESTRICTED if restrict else UNRESTRICTED
    # factor choices: object x choice x (sx, sy)
    choices = rng.uniform(lo, hi, size=(S, T, 2))
    total = T ** S
    if total <= cap:
        combos = list(range(total))
    else:
        combos = _sample_ids(rng, total, cap)
    out = []
    for combo in combos:
        pick = decode_combination(combo, T, S)
        factors = choices[np.arange(S), list(pick)]
        out.append(AugmentedScene(scene, factors, resize_boxes(scene.boxes, factors, scene.img), combo))
    return out


def _sample_ids(rng, total: int, n: int) -> list[int]:
    if total < 2 ** 62:
        return sorted(int(i) for i in rng.choice(total, size=n, replace=False))
    seen: set[int] = set()
    while len(seen) < n:
        seen.add(int(rng.integers(0, 2 ** 62)) % total)
    return sorted(seen)


def enumerate_combinations(T: int, S: int):
    return itertools.product(range(T), repeat=S)
