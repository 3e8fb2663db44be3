"""Trainable memory bank, query projection, prompt extraction, and the memory
regularization loss.

Prompts are convex combinations of the bank's prototype rows: invariant
prompts weight prototypes by query similarity, variant prompts by negated
similarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import Tensor, nn

from .exceptions import ConfigError, ShapeError
from .params import uniform_param


class MemoryBank(nn.Module):
    """M trainable d-dimensional prototype vectors.

    Initialized uniform on [-1/sqrt(d), +1/sqrt(d)] so initial query logits
    stay O(1).
    """

    def __init__(self, num_prototypes: int, dim: int,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        if num_prototypes < 2:
            raise ConfigError("memory bank needs at least two prototypes")
        super().__init__()
        self.num_prototypes = num_prototypes
        self.dim = dim
        self.prototypes = nn.Parameter(
            uniform_param((num_prototypes, dim), dim, generator, dtype))


class QueryProjection(nn.Module):
    """Linear map from k observed features to the d-dimensional query space."""

    def __init__(self, num_features: int, dim: int,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.weight = nn.Parameter(uniform_param((num_features, dim), num_features,
                                                 generator, dtype))
        self.bias = nn.Parameter(torch.zeros(dim, dtype=dtype))

    def forward(self, features: Tensor) -> Tensor:
        return project_query(features, self)


@dataclass
class PromptTensor:
    """Stack of prompt vectors with its provenance kind."""

    values: Tensor
    kind: str  # "invariant" | "variant"


class ExtractedPrompts(NamedTuple):
    invariant: PromptTensor
    variant: PromptTensor
    scores_invariant: Tensor
    scores_variant: Tensor


def project_query(features: Tensor, params: QueryProjection) -> Tensor:
    """Map features (..., N, k) to queries (..., N, d)."""
    if features.shape[-1] != params.weight.shape[0]:
        raise ShapeError(
            f"feature width {features.shape[-1]} does not match query projection "
            f"input {params.weight.shape[0]}")
    return features @ params.weight + params.bias


def _attend(query: Tensor, bank: MemoryBank, sign: float) -> tuple[Tensor, Tensor]:
    if query.shape[-1] != bank.dim:
        raise ShapeError(f"query dim {query.shape[-1]} does not match bank dim {bank.dim}")
    scores = torch.softmax(sign * (query @ bank.prototypes.T), dim=-1)
    return scores, scores @ bank.prototypes


def extract_invariant(query: Tensor, bank: MemoryBank) -> tuple[Tensor, Tensor]:
    """Similarity-weighted prompt: scores = row-softmax(Q Phi^T), prompt = scores Phi."""
    return _attend(query, bank, 1.0)


def extract_variant(query: Tensor, bank: MemoryBank) -> tuple[Tensor, Tensor]:
    """Dissimilarity-weighted prompt: the logits are negated before the softmax."""
    return _attend(query, bank, -1.0)


def extract_prompts(inputs: Tensor, params: QueryProjection, bank: MemoryBank) -> ExtractedPrompts:
    """Extract both prompt stacks for a (..., T, N, k) input tensor.

    Each time step is handled independently; the vectorized computation is
    identical to looping the single-step extractions and stacking.
    """
    query = project_query(inputs, params)
    scores_inv, prompt_inv = extract_invariant(query, bank)
    scores_var, prompt_var = extract_variant(query, bank)
    return ExtractedPrompts(
        invariant=PromptTensor(prompt_inv, "invariant"),
        variant=PromptTensor(prompt_var, "variant"),
        scores_invariant=scores_inv,
        scores_variant=scores_var,
    )


def top_two_indices(scores: Tensor) -> tuple[Tensor, Tensor]:
    """Indices of the largest and second-largest score per row, ties broken by
    lowest prototype index."""
    first = scores.argmax(dim=-1)
    masked = scores.clone()
    masked.scatter_(-1, first.unsqueeze(-1), float("-inf"))
    second = masked.argmax(dim=-1)
    return first, second


def memory_regularization(prompt: PromptTensor | Tensor, scores: Tensor,
                          bank: MemoryBank, margin: float) -> Tensor:
    """Hinge separation of the top-two queried prototypes plus alignment of the
    prompt with the top prototype, summed over all (t, n) slots.

    The top-two selection is index-only (no gradient flows through it); the
    hinge subgradient at exactly zero is zero.
    """
    if bank.num_prototypes < 2:
        raise ConfigError("memory regularization needs at least two prototypes")
    values = prompt.values if isinstance(prompt, PromptTensor) else prompt
    if scores.shape[:-1] != values.shape[:-1] or scores.shape[-1] != bank.num_prototypes:
        raise ShapeError(f"scores shape {tuple(scores.shape)} does not match "
                         f"prompts {tuple(values.shape)} with M={bank.num_prototypes}")
    first, second = top_two_indices(scores.detach())
    top = bank.prototypes[first]
    runner_up = bank.prototypes[second]
    dist_top = ((values - top) ** 2).sum(dim=-1)
    dist_runner_up = ((values - runner_up) ** 2).sum(dim=-1)
    hinge = torch.relu(dist_top - dist_runner_up + margin)
    return hinge.sum() + dist_top.sum()


def save_score_matrix(scores: np.ndarray | Tensor, path) -> None:
    """Write one score matrix (rows sum to 1) as a headerless CSV."""
    if isinstance(scores, Tensor):
        scores = scores.detach().cpu().numpy()
    np.savetxt(path, np.asarray(scores), delimiter=",", fmt="%.10g")
