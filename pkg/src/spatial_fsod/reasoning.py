"""Region-to-region spatial graph and graph-convolutional enhancement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ContractError, DimensionError, Tensor


@dataclass
class EdgeParams:
    """Bias-free projections; ``psi*`` act on class distributions (or raw
    features in the fc-embedding ablation), ``phi*`` on box encodings."""

    psi1: Tensor
    psi2: Tensor
    phi1: Tensor
    phi2: Tensor


@dataclass
class GcnParams:
    thetas: list[Tensor]


@dataclass
class SpatialGraph:
    raw: Tensor  # epsilon, N x N
    degree: Tensor  # N x 1 row sums (all ones in dense mode)
    normalized: Tensor  # D^-1 epsilon
    z_visual: Tensor
    z_geo: Tensor

    @property
    def n(self) -> int:
        return self.raw.rows


def _project(x: Tensor, w1: Tensor, w2: Tensor, proj_relu: bool) -> Tensor:
    if proj_relu:
        x = nx.relu(x)
    return nx.matmul(nx.matmul(x, w1), nx.transpose(nx.matmul(x, w2)))


def regress_edges(c: Tensor, o: Tensor, params: EdgeParams, mode: str = "sparse",
                  proj_relu: bool = False, check_distribution: bool = True) -> SpatialGraph:
    """Pairwise relatedness ``<psi1(c_i), psi2(c_j)> + <phi1(o_i), phi2(o_j)>``.

    ``sparse`` trims negative scores with ReLU and row-normalizes by degree;
    ``dense`` applies a row softmax instead (all nodes connected).
    """
    if c.rows != o.rows:
        raise DimensionError(f"regress_edges: {c.rows} class rows vs {o.rows} box rows")
    if c.rows < 1:
        raise DimensionError("regress_edges needs at least one node")
    if check_distribution:
        sums = c.value.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ContractError("class distribution rows must sum to 1")
    zv = _project(c, params.psi1, params.psi2, proj_relu)
    zg = _project(o, params.phi1, params.phi2, proj_relu)
    z = nx.add(zv, zg)
    if mode == "sparse":
        raw = nx.relu(z)
        return SpatialGraph(raw, nx.row_sums(raw), nx.row_normalize(raw), zv, zg)
    if mode == "dense":
        raw = nx.row_softmax(z)
        ones = raw.tape.constant(np.ones((raw.rows, 1)))
        return SpatialGraph(raw, ones, raw, zv, zg)
    raise ValueError(f"unknown edge mode {mode!r}")


def gcn_forward(f: Tensor, graph: SpatialGraph, params: GcnParams) -> Tensor:
    """``H <- ReLU((I + D^-1 eps) H Theta)`` for each layer; returns the last H."""
    if f.rows != graph.n:
        raise DimensionError(f"gcn_forward: {f.rows} nodes vs graph of {graph.n}")
    h = f
    for l, theta in enumerate(params.thetas):
        if h.cols != theta.rows:
            raise DimensionError(f"gcn layer {l}: width {h.cols} vs theta {theta.shape}")
        mixed = nx.add(h, nx.matmul(graph.normalized, h))
        h = nx.relu(nx.matmul(mixed, theta))
    return h


def enhance(f: Tensor, g: Tensor) -> Tensor:
    return nx.concat(f, g)


def split_enhanced(e: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    return e[:, :d], e[:, d:]
