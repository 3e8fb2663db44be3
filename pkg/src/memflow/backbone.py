"""Stacked diffusion-GNN + temporal-attention backbone and the auxiliary
predictor used during invariant learning.

Graph propagation sums bidirectional random-walk powers and (optionally)
semantic-adjacency powers from order 0 upward; order 0 contributes three
self-connections. Matrix powers are computed once per forward pass and shared
by all layers. Temporal attention runs per node over the T axis with a
learnable positional embedding; residual connections plus layer normalization
wrap both blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .exceptions import ConfigError, ShapeError
from .graphs import SemanticAdjacency, TransitionPair
from .params import seeded_linear, uniform_param


@dataclass
class BackboneConfig:
    input_dim: int
    hidden_dim: int
    output_dim: int
    horizon: int
    num_st_layers: int = 3
    diffusion_order: int = 2
    attention_heads: int = 1
    use_positional: bool = True
    use_semantic: bool = True

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "output_dim", "horizon",
                     "num_st_layers", "attention_heads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.diffusion_order < 0:
            raise ConfigError(f"diffusion_order must be >= 0, got {self.diffusion_order}")
        if self.hidden_dim % self.attention_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"{self.attention_heads} attention heads")

    @property
    def num_families(self) -> int:
        return 3 if self.use_semantic else 2


def matrix_powers(matrix: Tensor, order: int) -> Tensor:
    """Stack [matrix^1, ..., matrix^order] via iterated multiplication."""
    powers = [matrix]
    for _ in range(order - 1):
        powers.append(powers[-1] @ matrix)
    return torch.stack(powers)


def build_power_stack(transitions: TransitionPair,
                      semantic: SemanticAdjacency | None,
                      order: int) -> Tensor | None:
    """Concatenate per-family power stacks, family-major: forward powers,
    backward powers, then semantic powers. None when order is 0."""
    if order == 0:
        return None
    families = [transitions.forward, transitions.backward]
    if semantic is not None:
        families.append(semantic.matrix)
    return torch.cat([matrix_powers(m, order) for m in families])


class GraphPropagation(nn.Module):
    """One GNN layer: no activation, one d x d weight per family per power."""

    def __init__(self, dim: int, order: int, families: int,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.order = order
        self.families = families
        self.self_weights = nn.Parameter(
            uniform_param((families, dim, dim), dim, generator, dtype))
        if order > 0:
            self.hop_weights = nn.Parameter(
                uniform_param((families * order, dim, dim), dim, generator, dtype))
        else:
            self.hop_weights = None

    def forward(self, states: Tensor, power_stack: Tensor | None) -> Tensor:
        out = states @ self.self_weights.sum(dim=0)
        if self.order > 0:
            if power_stack is None or power_stack.shape[0] != self.families * self.order:
                raise ShapeError(
                    f"power stack must hold {self.families * self.order} matrices")
            propagated = torch.einsum("knm,...md->k...nd", power_stack, states)
            out = out + torch.einsum("k...nd,kde->...ne", propagated, self.hop_weights)
        return out


def gnn_layer(node_states: Tensor, transitions: TransitionPair,
              semantic: SemanticAdjacency | None,
              layer: GraphPropagation) -> Tensor:
    """Propagate one (..., N, d) snapshot through a GraphPropagation layer."""
    stack = build_power_stack(
        transitions, semantic if layer.families == 3 else None, layer.order)
    return layer(node_states, stack)


class TemporalAttention(nn.Module):
    """Scaled dot-product self-attention over the time axis, per node, followed
    by a feedforward MLP."""

    def __init__(self, dim: int, heads: int = 1,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.w_query = nn.Parameter(uniform_param((dim, dim), dim, generator, dtype))
        self.w_key = nn.Parameter(uniform_param((dim, dim), dim, generator, dtype))
        self.w_value = nn.Parameter(uniform_param((dim, dim), dim, generator, dtype))
        self.mlp = nn.Sequential(
            seeded_linear(dim, dim, generator, dtype),
            nn.ReLU(),
            seeded_linear(dim, dim, generator, dtype),
        )

    def forward(self, series: Tensor, pos_embedding: Tensor | None = None,
                return_weights: bool = False):
        # series: (..., T, d)
        g = series if pos_embedding is None else series + pos_embedding
        heads, head_dim = self.heads, self.head_dim
        query = (g @ self.w_query).unflatten(-1, (heads, head_dim))
        key = (g @ self.w_key).unflatten(-1, (heads, head_dim))
        value = (g @ self.w_value).unflatten(-1, (heads, head_dim))
        logits = torch.einsum("...thc,...shc->...hts", query, key) / math.sqrt(head_dim)
        weights = torch.softmax(logits, dim=-1)
        context = torch.einsum("...hts,...shc->...thc", weights, value).flatten(-2)
        out = self.mlp(context)
        if return_weights:
            return out, weights
        return out


class SpatialTemporalLayer(nn.Module):
    def __init__(self, dim: int, order: int, families: int, heads: int,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.propagation = GraphPropagation(dim, order, families, generator, dtype)
        self.attention = TemporalAttention(dim, heads, generator, dtype)
        self.norm_spatial = nn.LayerNorm(dim, dtype=dtype)
        self.norm_temporal = nn.LayerNorm(dim, dtype=dtype)

    def forward(self, states: Tensor, power_stack: Tensor | None,
                pos_embedding: Tensor | None) -> Tensor:
        # states: (..., T, N, d)
        states = self.norm_spatial(states + self.propagation(states, power_stack))
        series = states.transpose(-3, -2)  # (..., N, T, d)
        series = self.norm_temporal(series + self.attention(series, pos_embedding))
        return series.transpose(-3, -2)


class SpatialTemporalBackbone(nn.Module):
    """Input projection, stacked spatial-temporal layers, and an MLP head
    mapping (..., T, N, input_dim) to (..., T, N, output_dim)."""

    def __init__(self, config: BackboneConfig,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.input_proj = seeded_linear(config.input_dim, config.hidden_dim,
                                        generator, dtype)
        self.layers = nn.ModuleList([
            SpatialTemporalLayer(config.hidden_dim, config.diffusion_order,
                                 config.num_families, config.attention_heads,
                                 generator, dtype)
            for _ in range(config.num_st_layers)
        ])
        if config.use_positional:
            self.pos_embedding = nn.Parameter(
                uniform_param((config.horizon, config.hidden_dim),
                              config.hidden_dim, generator, dtype))
        else:
            self.pos_embedding = None
        self.head = nn.Sequential(
            seeded_linear(config.hidden_dim, config.hidden_dim, generator, dtype),
            nn.ReLU(),
            seeded_linear(config.hidden_dim, config.output_dim, generator, dtype),
        )

    def forward(self, inputs: Tensor, transitions: TransitionPair,
                semantic: SemanticAdjacency | None,
                power_stack: Tensor | None = None) -> Tensor:
        if inputs.shape[-1] != self.config.input_dim:
            raise ShapeError(
                f"input width {inputs.shape[-1]} does not match backbone "
                f"input_dim {self.config.input_dim}")
        if self.config.use_semantic and semantic is None:
            raise ShapeError("backbone configured with a semantic family but none given")
        if power_stack is None:
            power_stack = build_power_stack(
                transitions, semantic if self.config.use_semantic else None,
                self.config.diffusion_order)
        states = self.input_proj(inputs)
        for layer in self.layers:
            states = layer(states, power_stack, self.pos_embedding)
        return self.head(states)


def aux_predict(invariant, intervened_variant, transitions: TransitionPair,
                aux_backbone: SpatialTemporalBackbone) -> Tensor:
    """Concatenate invariant and intervened-variant prompts feature-wise and run
    the auxiliary predictor over the geolocation graph only."""
    inv_values = getattr(invariant, "values", invariant)
    var_values = getattr(intervened_variant, "values", intervened_variant)
    if inv_values.shape != var_values.shape:
        raise ShapeError(
            f"prompt tensors differ in shape: {tuple(inv_values.shape)} vs "
            f"{tuple(var_values.shape)}")
    joint = torch.cat([inv_values, var_values], dim=-1)
    return aux_backbone(joint, transitions, semantic=None)
