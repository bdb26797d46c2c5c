"""Line-oriented ``key=value`` run configuration.

Blank lines and ``#`` comments are ignored.  Unknown keys are rejected.
Schedules are written ``steps:lr,steps:lr``; tuples are comma separated.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

CONFIG_ENV = "SPATIAL_FSOD_CONFIG"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


Schedule = tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # synthetic world
    n_base: int = 10
    n_novel: int = 4
    d: int = 32
    n_groups: int = 4
    affinity_in: float = 1.0
    affinity_out: float = 0.03
    affinity_self: float = 0.3
    perturb: float = 0.2
    img_min: float = 64.0
    img_max: float = 128.0
    min_objects: int = 2
    max_objects: int = 4
    overlap_cap: float = 0.3
    obj_min_frac: float = 0.15
    obj_max_frac: float = 0.5
    jitter_copies: int = 4
    jitter_frac: float = 0.1
    n_bg: int = 6
    sigma_f: float = 0.335
    gamma: float = 0.25
    n_base_scenes: int = 600
    n_test_scenes: int = 200
    # reasoning
    reasoning: bool = True
    edge_mode: str = "sparse"
    edge_embed: str = "aux"
    proj_relu: bool = False
    p: int = 16
    q_geo: int = 16
    gcn_widths: tuple[int, ...] = (32, 16)
    alpha: float = 20.0
    # augmentation
    T: int = 3
    aug_cap: int = 16
    restrict: bool = True
    # training
    k: int = 5
    batch_size: int = 4
    momentum: float = 0.9
    weight_decay: float = 0.001
    base_schedule: Schedule = ((3000, 0.01), (500, 0.001))
    finetune_schedule: Schedule = ((800, 0.001),)
    finetune_gcn: bool = False
    finetune_reg: bool = True
    novel_init_std: float = 0.01
    init_seed_offset: int = 0
    # evaluation
    nms_thresh: float = 0.5
    score_floor: float = 0.05
    iou_thresholds: tuple[float, ...] = (0.5, 0.75)
    # ablation harness
    ablation_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    sweep_T: tuple[int, ...] = (0, 1, 2, 3, 4, 5)

    def __post_init__(self):
        _validate(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def n_categories(self) -> int:
        return self.n_base + self.n_novel

    @property
    def q_out(self) -> int:
        return self.gcn_widths[-1]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict[str, str]:
        return {f.name: _format(getattr(self, f.name)) for f in fields(self)}


def _validate(c: RunConfig) -> None:
    def need(ok, key, msg):
        if not ok:
            raise ConfigError(key, msg)

    need(c.n_base >= 2, "n_base", "must be >= 2")
    need(c.n_novel >= 1, "n_novel", "must be >= 1")
    need(c.d >= 8, "d", "must be >= 8")
    need(c.n_groups >= 1, "n_groups", "must be >= 1")
    need(1 <= c.min_objects <= c.max_objects, "max_objects", "need 1 <= min_objects <= max_objects")
    need(0 < c.overlap_cap <= 1, "overlap_cap", "must lie in (0, 1]")
    need(0 < c.obj_min_frac <= c.obj_max_frac <= 1, "obj_max_frac", "need 0 < obj_min_frac <= obj_max_frac <= 1")
    need(0 < c.img_min <= c.img_max, "img_max", "need 0 < img_min <= img_max")
    need(c.jitter_copies >= 1, "jitter_copies", "must be >= 1")
    need(c.n_bg >= 0, "n_bg", "must be >= 0")
    need(c.sigma_f >= 0, "sigma_f", "must be >= 0")
    need(0 <= c.perturb <= 0.25, "perturb", "must lie in [0, 0.25]")
    need(c.edge_mode in ("sparse", "dense"), "edge_mode", "must be 'sparse' or 'dense'")
    need(c.edge_embed in ("aux", "fc"), "edge_embed", "must be 'aux' or 'fc'")
    need(len(c.gcn_widths) >= 1 and all(w >= 1 for w in c.gcn_widths), "gcn_widths", "need >= 1 positive width")
    need(c.p >= 1 and c.q_geo >= 1, "p", "projection widths must be positive")
    need(c.alpha > 0, "alpha", "must be > 0")
    need(c.T >= 0, "T", "must be >= 0")
    need(c.aug_cap >= 1, "aug_cap", "must be >= 1")
    need(c.k >= 1, "k", "must be >= 1")
    need(c.batch_size >= 1, "batch_size", "must be >= 1")
    need(0 <= c.momentum < 1, "momentum", "must lie in [0, 1)")
    need(c.weight_decay >= 0, "weight_decay", "must be >= 0")
    for key in ("base_schedule", "finetune_schedule"):
        for steps, lr in getattr(c, key):
            need(steps >= 0 and lr > 0, key, "steps must be >= 0 and rates > 0")
    need(all(0 < t <= 1 for t in c.iou_thresholds), "iou_thresholds", "must lie in (0, 1]")
    need(len(c.ablation_seeds) >= 1, "ablation_seeds", "need at least one seed")


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join(f"{s}:{_format(lr)}" for s, lr in v)
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, typ: Any, raw: str):
    raw = raw.strip()
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("on", "true", "1", "yes"):
                return True
            if low in ("off", "false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        if typ is str or typ == "str":
            return raw
        if typ in (Schedule, "Schedule"):
            out = []
            for part in raw.split(","):
                steps, lr = part.split(":")
                out.append((int(steps), float(lr)))
            return tuple(out)
        if typ in (tuple[int, ...], "tuple[int, ...]"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if typ in (tuple[float, ...], "tuple[float, ...]"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r}") from exc
    raise ConfigError(key, f"unsupported type {typ}")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not key=value")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(key, "unknown key")
        values[key] = _parse_value(key, known[key], raw)
    return (base or RunConfig()).replace(**values)


def config_from_dict(values: dict[str, str]) -> RunConfig:
    """Rebuild a config from its ``to_dict`` echo."""
    return parse_config("\n".join(f"{k}={v}" for k, v in values.items()))


def load_config(path: str | os.PathLike | None = None) -> RunConfig:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


CONFIG_DIR = Path(__file__).with_name("configs")


def shipped_config(name: str) -> Path:
    """Path of a config file shipped with the package (``default`` or ``tiny``)."""
    return CONFIG_DIR / f"{name}.cfg"


DEFAULT = RunConfig()
TINY = RunConfig(
    n_base=4, n_novel=2, d=8, n_groups=2, gcn_widths=(8, 4), p=4, q_geo=4,
    n_base_scenes=20, n_test_scenes=10, max_objects=3, jitter_copies=2, n_bg=2,
    base_schedule=((20, 0.01),), finetune_schedule=((10, 0.001),),
    k=1, T=2, aug_cap=4, ablation_seeds=(0,), sweep_T=(0, 1),
)

__all__ = ["RunConfig", "ConfigError", "parse_config", "load_config", "config_from_dict", "DEFAULT", "TINY", "CONFIG_ENV",
           "shipped_config"]
