"""Parameter layout, initialization and the full detector forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .checkpoint import Checkpoint
from .config import RunConfig
from .heads import DetectionOutput, aux_classify, aux_logits, cosine_scores, regress_boxes
from .numerics import Tape, Tensor
from .reasoning import EdgeParams, GcnParams, SpatialGraph, enhance, gcn_forward, regress_edges
from .scenegen import stream

EDGE_NAMES = ("edge.psi1", "edge.psi2", "edge.phi1", "edge.phi2")
AUX_NAME = "head.aux_W"
MAIN_NAME = "head.main_W"
REG_NAME = "head.reg_W"
ALPHA_NAME = "head.alpha"


def gcn_names(config: RunConfig) -> list[str]:
    return [f"gcn.theta{i}" for i in range(len(config.gcn_widths))]


def enhanced_width(config: RunConfig) -> int:
    return config.d + (config.q_out if config.reasoning else 0)


def init_params(config: RunConfig, n_base: int, seed: int | None = None) -> dict[str, np.ndarray]:
    seed = config.seed if seed is None else seed
    rng = stream(seed + config.init_seed_offset, "init")
    d = config.d
    params: dict[str, np.ndarray] = {}
    if config.reasoning:
        v_in = 1 + n_base if config.edge_embed == "aux" else d
        for name in EDGE_NAMES[:2]:
            params[name] = rng.standard_normal((v_in, config.p)) / np.sqrt(v_in)
        for name in EDGE_NAMES[2:]:
            params[name] = rng.standard_normal((6, config.q_geo)) / np.sqrt(6)
        width = d
        for name, w in zip(gcn_names(config), config.gcn_widths):
            params[name] = rng.standard_normal((width, w)) * np.sqrt(2.0 / width)
            width = w
    params[AUX_NAME] = rng.standard_normal((d, 1 + n_base)) * 0.01
    params[MAIN_NAME] = rng.standard_normal((1 + n_base, enhanced_width(config))) * 0.01
    params[REG_NAME] = rng.standard_normal((enhanced_width(config), 4)) * 0.001
    params[ALPHA_NAME] = np.array([[float(config.alpha)]])
    return params


def initial_checkpoint(config: RunConfig, base_ids: list[int], seed: int | None = None) -> Checkpoint:
    return Checkpoint(
        tensors=init_params(config, len(base_ids), seed),
        phase="init",
        base_ids=list(base_ids),
        novel_ids=[],
        config=config.to_dict(),
    )


def trainable_names(tensors, config: RunConfig, phase: str) -> list[str]:
    """Names updated by the optimizer in ``phase`` ('base' or 'finetune')."""
    names = [n for n in tensors if n != ALPHA_NAME]
    if phase == "base":
        return names
    keep = [MAIN_NAME]
    if config.finetune_reg:
        keep.append(REG_NAME)
    if config.finetune_gcn:
        keep.extend(n for n in names if n.startswith("gcn."))
    return [n for n in names if n in keep]


@dataclass
class Forward:
    out: DetectionOutput
    f: Tensor
    e: Tensor
    c: Tensor | None = None
    graph: SpatialGraph | None = None
    g: Tensor | None = None


def leaves(tape: Tape, tensors: dict[str, np.ndarray], trainable=()) -> dict[str, Tensor]:
    trainable = set(trainable)
    return {n: tape.leaf(v, trainable=n in trainable, name=n) for n, v in tensors.items()}


def embed(tape: Tape, p: dict[str, Tensor], features, geo, config: RunConfig,
          ) -> tuple[Tensor, Tensor, Tensor | None, SpatialGraph | None, Tensor | None]:
    """Features -> (f, e, c, graph, g); ``e`` is ``f`` alone when reasoning is off."""
    f = features if isinstance(features, Tensor) else tape.constant(features)
    c = aux_classify(f, p[AUX_NAME])
    if not config.reasoning:
        return f, f, c, None, None
    o = geo if isinstance(geo, Tensor) else tape.constant(geo)
    edge = EdgeParams(*(p[n] for n in EDGE_NAMES))
    node_in = c if config.edge_embed == "aux" else f
    graph = regress_edges(node_in, o, edge, mode=config.edge_mode, proj_relu=config.proj_relu,
                          check_distribution=config.edge_embed == "aux")
    g = gcn_forward(f, graph, GcnParams([p[n] for n in gcn_names(config)]))
    return f, enhance(f, g), c, graph, g


def heads_forward(p: dict[str, Tensor], e: Tensor, alpha: float, f: Tensor | None = None) -> DetectionOutput:
    logits = cosine_scores(e, p[MAIN_NAME], alpha)
    offsets = regress_boxes(e, p[REG_NAME])
    aux = aux_logits(f, p[AUX_NAME]) if f is not None else None
    return DetectionOutput(logits, offsets, aux)


def forward(tape: Tape, p: dict[str, Tensor], features, geo, config: RunConfig) -> Forward:
    f, e, c, graph, g = embed(tape, p, features, geo, config)
    alpha = float(p[ALPHA_NAME].value[0, 0])
    out = heads_forward(p, e, alpha, f)
    return Forward(out, f, e, c, graph, g)


def enhanced_features(tensors: dict[str, np.ndarray], features, geo, config: RunConfig) -> np.ndarray:
    """Forward-only computation of ``e`` (no gradients kept)."""
    tape = Tape()
    p = leaves(tape, tensors)
    return embed(tape, p, features, geo, config)[1].value


def aux_distribution(tensors: dict[str, np.ndarray], features) -> np.ndarray:
    tape = Tape()
    return aux_classify(tape.constant(features), tape.constant(tensors[AUX_NAME])).value


def predict(tensors: dict[str, np.ndarray], features, geo, config: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities (softmax over cosine logits) and box offsets."""
    tape = Tape()
    p = leaves(tape, tensors)
    fw = forward(tape, p, features, geo, config)
    probs = nx.row_softmax(fw.out.logits).value
    return probs, fw.out.offsets.value
