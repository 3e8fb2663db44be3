"""Loss terms and their composition.

All masked reductions treat the mask as element validity over the raw target:
masked-out entries contribute to nothing. The variance of the invariant-
learning term is the population variance pooled over every valid
(batch, t, n) element of the current batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .exceptions import ConfigError, DataError, ShapeError


@dataclass
class LossConfig:
    lambda1: float = 0.3
    lambda2: float = 0.1
    margin: float = 1.0
    variance_mode: str = "population"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights lambda1/lambda2 must be nonnegative")
        if self.margin < 0:
            raise ConfigError("margin must be nonnegative")
        if self.variance_mode != "population":
            raise ConfigError(f"unsupported variance_mode {self.variance_mode!r}")


def elementwise_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference of two k-vectors."""
    if pred.shape != target.shape:
        raise ShapeError(f"length mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def _check_shapes(pred: Tensor, target: Tensor, mask: Tensor | None) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {tuple(pred.shape)} does not match "
                         f"target {tuple(target.shape)}")
    if mask is not None and mask.shape != target.shape:
        raise ShapeError(f"mask shape {tuple(mask.shape)} does not match "
                         f"target {tuple(target.shape)}")


def task_loss(pred: Tensor, target: Tensor, mask: Tensor | None = None) -> Tensor:
    """Masked mean absolute error over all scalar entries."""
    _check_shapes(pred, target, mask)
    err = (pred - target).abs()
    if mask is None:
        return err.mean()
    mask = mask.to(err.dtype)
    total = mask.sum()
    if total == 0:
        raise DataError("task loss over an empty valid set")
    return (err * mask).sum() / total


def invariant_loss(pred: Tensor, target: Tensor, lambda1: float,
                   mask: Tensor | None = None) -> Tensor:
    """Mean plus lambda1 * population variance of per-(t, n) element losses.

    The per-element loss averages absolute errors over the valid feature
    channels of that (t, n) slot; slots with no valid channel are dropped.
    """
    _check_shapes(pred, target, mask)
    err = (pred - target).abs()
    if mask is None:
        per_element = err.mean(dim=-1).reshape(-1)
    else:
        mask = mask.to(err.dtype)
        counts = mask.sum(dim=-1)
        sums = (err * mask).sum(dim=-1)
        valid = counts.reshape(-1) > 0
        if not bool(valid.any()):
            raise DataError("invariant loss over an empty valid set")
        per_element = (sums.reshape(-1)[valid]) / counts.reshape(-1)[valid]
    mean = per_element.mean()
    variance = ((per_element - mean) ** 2).mean()
    return mean + lambda1 * variance


def total_loss(task: Tensor, inv: Tensor, reg: Tensor, config: LossConfig) -> Tensor:
    """Overall objective: task + invariant + lambda2 * regularization."""
    return task + inv + config.lambda2 * reg
