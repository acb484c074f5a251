"""Sensor correlation graphs: construction, top-s edge augmentation, GNN update.

All functions accept arbitrary leading batch dimensions in front of the
(N, d) feature / (N, N) edge axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class SensorGraph:
    nodes: torch.Tensor  # (..., N, d)
    edges: torch.Tensor  # (..., N, N)


def build_graph(z: torch.Tensor) -> SensorGraph:
    """Dot-product correlations between sensors, softmax-normalized along each row."""
    if z.shape[-2] < 2:
        raise ShapeError(f"a sensor graph needs N >= 2 nodes, got {z.shape[-2]}")
    if not torch.isfinite(z).all():
        raise NumericError("non-finite node features")
    scores = z @ z.transpose(-1, -2)
    return SensorGraph(z, torch.softmax(scores, dim=-1))


def top_s_mask(edges: torch.Tensor, s: int) -> torch.Tensor:
    """Boolean mask of the s largest entries per row; ties go to the lower column."""
    n = edges.shape[-1]
    if not 1 <= s <= n:
        raise ConfigError(f"s={s} outside [1, N={n}]", "s")
    order = torch.sort(edges.detach(), dim=-1, descending=True, stable=True).indices
    mask = torch.zeros(edges.shape, dtype=torch.bool, device=edges.device)
    return mask.scatter(-1, order[..., :s], True)


def augment_edges(graph: SensorGraph, s: int, generator: torch.Generator | None = None) -> SensorGraph:
    """Keep each row's top-s correlations, replace the rest with U[0, 1] draws.

    One uniform value is drawn for every edge position, in row-major order,
    and used wherever that position is replaced. Replacements carry no
    gradient; retained entries stay attached to the node features.
    """
    edges = graph.edges
    n = edges.shape[-1]
    if not 1 <= s <= n:
        raise ConfigError(f"s={s} outside [1, N={n}]", "s")
    if s == n:
        return SensorGraph(graph.nodes, edges)
    keep = top_s_mask(edges, s)
    noise = torch.rand(edges.shape, generator=generator, dtype=edges.dtype, device=edges.device)
    return SensorGraph(graph.nodes, torch.where(keep, edges, noise))


def gnn_layer(graph: SensorGraph, weight: torch.Tensor) -> torch.Tensor:
    """relu(E @ Z @ W): each sensor aggregates its neighbours weighted by edge strength."""
    z, e = graph.nodes, graph.edges
    if e.shape[-1] != z.shape[-2] or e.shape[-2] != z.shape[-2]:
        raise ShapeError(f"edges {tuple(e.shape)} do not match nodes {tuple(z.shape)}")
    if weight.shape != (z.shape[-1], z.shape[-1]):
        raise ShapeError(f"W_g must be ({z.shape[-1]}, {z.shape[-1]}), got {tuple(weight.shape)}")
    return torch.relu(e @ z @ weight)
