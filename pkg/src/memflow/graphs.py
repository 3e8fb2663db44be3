"""Static geolocation graph, random-walk transition matrices, and the learned
semantic adjacency derived from the memory bank."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import torch
from torch import Tensor, nn

from .exceptions import DataError, ShapeError
from .params import uniform_param

if TYPE_CHECKING:
    from .memory import MemoryBank


@dataclass
class GeoGraph:
    """Sensor/region graph with a nonnegative (typically binary) adjacency."""

    adjacency: np.ndarray
    num_nodes: int = field(init=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ShapeError(f"adjacency must be a square matrix, got shape {adj.shape}")
        if not np.isfinite(adj).all():
            raise ShapeError("adjacency contains non-finite entries")
        if (adj < 0).any():
            raise ShapeError("adjacency entries must be nonnegative")
        self.adjacency = adj
        self.num_nodes = adj.shape[0]


@dataclass
class TransitionPair:
    """Row-stochastic forward/backward random-walk matrices.

    Rows of nodes with zero out-degree (forward) or in-degree (backward) are
    all-zero instead of raising on the division.
    """

    forward: Tensor
    backward: Tensor


def _row_normalize(matrix: Tensor) -> Tensor:
    degree = matrix.sum(dim=1, keepdim=True)
    inverse = torch.zeros_like(degree)
    nonzero = degree.squeeze(1) > 0
    inverse[nonzero] = 1.0 / degree[nonzero]
    return matrix * inverse


def build_transitions(graph: GeoGraph, dtype: torch.dtype = torch.float64) -> TransitionPair:
    """Degree-normalize the adjacency into forward/backward transitions.

    forward = out-degree-normalized A, backward = in-degree-normalized A^T.
    """
    adjacency = torch.as_tensor(graph.adjacency, dtype=dtype)
    return TransitionPair(
        forward=_row_normalize(adjacency),
        backward=_row_normalize(adjacency.T.contiguous()),
    )


class SemanticGraphParams(nn.Module):
    """Trainable projections mapping the memory prototypes to node embeddings."""

    def __init__(self, num_nodes: int, num_prototypes: int,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.proj_a = nn.Parameter(uniform_param((num_nodes, num_prototypes),
                                                 num_prototypes, generator, dtype))
        self.proj_b = nn.Parameter(uniform_param((num_nodes, num_prototypes),
                                                 num_prototypes, generator, dtype))


@dataclass
class SemanticAdjacency:
    """Dense row-stochastic adjacency shared by every time step of a forward pass."""

    matrix: Tensor


def build_semantic_adjacency(bank: "MemoryBank", params: SemanticGraphParams) -> SemanticAdjacency:
    """Project the memory bank to two node embeddings and row-softmax their
    similarity into a dense adjacency.

    The result depends only on trainable parameters, so callers cache it per
    forward pass rather than per time step.
    """
    prototypes = bank.prototypes
    if params.proj_a.shape[1] != prototypes.shape[0]:
        raise ShapeError(
            f"projection width {params.proj_a.shape[1]} does not match "
            f"{prototypes.shape[0]} prototypes")
    embed_a = params.proj_a @ prototypes
    embed_b = params.proj_b @ prototypes
    return SemanticAdjacency(torch.softmax(embed_a @ embed_b.T, dim=1))


def load_adjacency_csv(path) -> GeoGraph:
    """Read an N x N comma-separated adjacency matrix (no header)."""
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(np.array([float(cell) for cell in line.split(",")]))
            except ValueError as exc:
                raise DataError(f"{path}: row {line_no}: non-numeric cell ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: empty adjacency file")
    widths = {row.shape[0] for row in rows}
    if len(widths) != 1 or widths.pop() != len(rows):
        raise DataError(f"{path}: adjacency is not square ({len(rows)} rows, widths {sorted(set(r.shape[0] for r in rows))})")
    try:
        return GeoGraph(np.stack(rows))
    except ShapeError as exc:
        raise DataError(f"{path}: {exc}") from exc
