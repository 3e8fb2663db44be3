"""Full trainable model state: memory bank, prompt extractor, semantic-graph
projections, prediction backbone, and the auxiliary predictor.

Component toggles cover the ablation grid: `use_prompts` feeds the backbone
memory prompts instead of raw features, `use_semantic` adds the learned
adjacency family, `use_invariant` enables the intervention + auxiliary
predictor path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import Tensor, nn

from .backbone import BackboneConfig, SpatialTemporalBackbone, aux_predict
from .exceptions import ConfigError, ContractError
from .graphs import (GeoGraph, SemanticAdjacency, SemanticGraphParams,
                     TransitionPair, build_semantic_adjacency, build_transitions)
from .memory import ExtractedPrompts, MemoryBank, QueryProjection, extract_prompts

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelConfig:
    num_features: int
    horizon: int
    hidden_dim: int = 32
    num_prototypes: int = 30
    num_st_layers: int = 3
    diffusion_order: int = 2
    attention_heads: int = 1
    use_positional: bool = True
    init_prompt: str = "invariant"
    use_prompts: bool = True
    use_semantic: bool = True
    use_invariant: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.init_prompt not in ("invariant", "variant"):
            raise ConfigError(f"init_prompt must be invariant|variant, got {self.init_prompt!r}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        if self.use_invariant and not self.use_prompts:
            raise ConfigError("invariant learning requires prompts (use_prompts=true)")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]


class MemFlowNet(nn.Module):
    """Everything trained jointly by one optimizer pass."""

    def __init__(self, config: ModelConfig, graph: GeoGraph):
        super().__init__()
        self.config = config
        dtype = config.torch_dtype
        generator = torch.Generator().manual_seed(config.seed)
        transitions = build_transitions(graph, dtype=dtype)
        self.register_buffer("transition_forward", transitions.forward)
        self.register_buffer("transition_backward", transitions.backward)

        needs_bank = config.use_prompts or config.use_semantic
        self.bank = (MemoryBank(config.num_prototypes, config.hidden_dim, generator, dtype)
                     if needs_bank else None)
        self.query = (QueryProjection(config.num_features, config.hidden_dim, generator, dtype)
                      if config.use_prompts else None)
        self.semantic = (SemanticGraphParams(graph.num_nodes, config.num_prototypes,
                                             generator, dtype)
                         if config.use_semantic else None)

        backbone_input = config.hidden_dim if config.use_prompts else config.num_features
        self.backbone = SpatialTemporalBackbone(
            BackboneConfig(
                input_dim=backbone_input,
                hidden_dim=config.hidden_dim,
                output_dim=config.num_features,
                horizon=config.horizon,
                num_st_layers=config.num_st_layers,
                diffusion_order=config.diffusion_order,
                attention_heads=config.attention_heads,
                use_positional=config.use_positional,
                use_semantic=config.use_semantic,
            ), generator, dtype)
        # The auxiliary predictor sees H_I || intervened H_V over the
        # geolocation graph only.
        self.aux = (SpatialTemporalBackbone(
            BackboneConfig(
                input_dim=2 * config.hidden_dim,
                hidden_dim=config.hidden_dim,
                output_dim=config.num_features,
                horizon=config.horizon,
                num_st_layers=config.num_st_layers,
                diffusion_order=config.diffusion_order,
                attention_heads=config.attention_heads,
                use_positional=config.use_positional,
                use_semantic=False,
            ), generator, dtype)
            if config.use_invariant else None)

    @property
    def transitions(self) -> TransitionPair:
        return TransitionPair(self.transition_forward, self.transition_backward)

    def semantic_adjacency(self) -> SemanticAdjacency | None:
        """Recomputed once per forward pass / training step, shared across time."""
        if self.semantic is None:
            return None
        return build_semantic_adjacency(self.bank, self.semantic)

    def extract(self, inputs: Tensor) -> ExtractedPrompts:
        if self.query is None:
            raise ContractError("model was built without a prompt extractor")
        return extract_prompts(inputs, self.query, self.bank)

    def backbone_inputs(self, inputs: Tensor,
                        prompts: ExtractedPrompts | None) -> Tensor:
        if not self.config.use_prompts:
            return inputs
        chosen = (prompts.invariant if self.config.init_prompt == "invariant"
                  else prompts.variant)
        if chosen.kind != self.config.init_prompt:
            raise ContractError(
                f"backbone expects {self.config.init_prompt} prompts, got {chosen.kind}")
        return chosen.values

    def forward(self, inputs: Tensor) -> Tensor:
        """Prediction path only: (..., T, N, k) -> (..., T, N, k)."""
        semantic = self.semantic_adjacency()
        prompts = self.extract(inputs) if self.config.use_prompts else None
        feats = self.backbone_inputs(inputs, prompts)
        return self.backbone(feats, self.transitions, semantic)

    def aux_forward(self, invariant, intervened_variant) -> Tensor:
        if self.aux is None:
            raise ContractError("model was built without the auxiliary predictor")
        return aux_predict(invariant, intervened_variant, self.transitions, self.aux)

    def config_dict(self) -> dict:
        return asdict(self.config)
