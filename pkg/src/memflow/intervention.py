"""Latent spatial-temporal intervention: swapping variant-prompt vectors
between random (time, node) slots.

Draw protocol per iteration: a node pair (w, v), then a time-step pair
(i, j), all uniform with replacement from a numpy PCG64 stream
(numpy.random.default_rng). Every swap reads from the ORIGINAL tensor and
writes into the copy, so overlapping draws duplicate vectors instead of
chaining swaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from torch import Tensor

from .exceptions import ConfigError, ContractError
from .memory import PromptTensor


@dataclass(frozen=True)
class InterventionConfig:
    ratio: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"intervention ratio must lie in [0, 1], got {self.ratio}")


def num_swaps(ratio: float, num_nodes: int) -> int:
    return math.floor(ratio * num_nodes / 2.0)


def _swap_slots(source: Tensor, target: Tensor, ratio: float,
                rng: np.random.Generator) -> None:
    horizon, nodes = source.shape[-3], source.shape[-2]
    for _ in range(num_swaps(ratio, nodes)):
        node_w, node_v = rng.integers(0, nodes, size=2)
        step_i, step_j = rng.integers(0, horizon, size=2)
        target[..., step_i, node_w, :] = source[..., step_j, node_v, :]
        target[..., step_j, node_v, :] = source[..., step_i, node_w, :]


def intervene(variant: PromptTensor, config: InterventionConfig,
              rng: np.random.Generator | None = None) -> PromptTensor:
    """Swap floor(ratio * N / 2) random slot pairs of a (T, N, d) variant prompt.

    Deterministic given config.seed (or an explicit stream); the input tensor
    is never modified.
    """
    if variant.kind != "variant":
        raise ContractError(f"intervention requires a variant prompt, got kind={variant.kind!r}")
    if variant.values.ndim != 3:
        raise ContractError(f"expected a (T, N, d) tensor, got shape {tuple(variant.values.shape)}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    swapped = variant.values.clone()
    _swap_slots(variant.values, swapped, config.ratio, rng)
    return PromptTensor(swapped, "variant")


def intervene_batch(values: Tensor, config: InterventionConfig,
                    rng: np.random.Generator) -> Tensor:
    """Apply the intervention independently per sample of a (B, T, N, d) batch.

    Samples draw consecutively from the shared stream, so each sample gets a
    distinct slot selection.
    """
    swapped = values.clone()
    for sample in range(values.shape[0]):
        _swap_slots(values[sample], swapped[sample], config.ratio, rng)
    return swapped


def epoch_rng(config: InterventionConfig, epoch: int) -> np.random.Generator:
    """Fresh deterministic stream for each training epoch."""
    return np.random.default_rng([config.seed, epoch])
