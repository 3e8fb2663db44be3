"""Training loop with per-epoch re-intervention, early stopping, and
checkpointing.

Each batch step: extract prompts, build the semantic adjacency once, intervene
on the variant prompts (fresh seeded draws every epoch), run both predictors,
assemble the overall loss, and take one optimizer step across every parameter
group. Epoch records are JSON-serializable dicts.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import WindowedDataset
from .exceptions import ConfigError, NumericalError
from .graphs import GeoGraph
from .intervention import InterventionConfig, epoch_rng, intervene_batch
from .losses import LossConfig, invariant_loss, task_loss, total_loss
from .memory import memory_regularization
from .model import MemFlowNet, ModelConfig


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_patience: int = 15
    grad_clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_epochs < 0 or self.early_stop_patience < 0:
            raise ConfigError("max_epochs and early_stop_patience must be >= 0")


def iter_batches(indices: np.ndarray, batch_size: int):
    for start in range(0, len(indices), batch_size):
        yield indices[start:start + batch_size]


def _require_finite(name: str, value: torch.Tensor, epoch: int, batch: int) -> None:
    if not torch.isfinite(value):
        raise NumericalError(
            f"non-finite {name} at epoch {epoch}, batch {batch}: {value.item()}")


def compute_batch_losses(model: MemFlowNet, inputs, targets, mask,
                         loss_cfg: LossConfig,
                         intervention_cfg: InterventionConfig | None,
                         rng: np.random.Generator | None):
    """All three loss terms for one batch; disabled components contribute 0."""
    cfg = model.config
    dtype = cfg.torch_dtype
    semantic = model.semantic_adjacency()
    prompts = model.extract(inputs) if cfg.use_prompts else None
    feats = model.backbone_inputs(inputs, prompts)
    pred = model.backbone(feats, model.transitions, semantic)
    loss_task = task_loss(pred, targets, mask)

    zero = torch.zeros((), dtype=dtype)
    loss_inv = zero
    if cfg.use_invariant:
        intervened = intervene_batch(prompts.variant.values, intervention_cfg, rng)
        aux_pred = model.aux_forward(prompts.invariant.values, intervened)
        loss_inv = invariant_loss(aux_pred, targets, loss_cfg.lambda1, mask)

    loss_reg = zero
    if cfg.use_prompts:
        # Per-sample (t, n) sums, averaged over the batch dimension.
        loss_reg = memory_regularization(
            prompts.invariant.values, prompts.scores_invariant, model.bank,
            loss_cfg.margin) / inputs.shape[0]
    return loss_task, loss_inv, loss_reg, pred


def validation_mae(model: MemFlowNet, dataset: WindowedDataset,
                   batch_size: int) -> float:
    """Task MAE over the validation split in normalized units."""
    indices = dataset.split_indices("val")
    dtype = model.config.torch_dtype
    total_err = 0.0
    total_count = 0.0
    model.eval()
    with torch.no_grad():
        for batch_idx in iter_batches(indices, batch_size):
            inputs, targets, _, mask = dataset.batch(batch_idx, dtype=dtype)
            pred = model(inputs)
            maskf = mask.to(dtype)
            total_err += float(((pred - targets).abs() * maskf).sum())
            total_count += float(maskf.sum())
    model.train()
    if total_count == 0:
        raise NumericalError("validation split has no valid elements")
    return total_err / total_count


def train(model: MemFlowNet, dataset: WindowedDataset, train_cfg: TrainConfig,
          loss_cfg: LossConfig,
          intervention_cfg: InterventionConfig | None = None,
          report_path: str | Path | None = None,
          log_fn=None) -> tuple[MemFlowNet, list[dict]]:
    """Optimize all parameter groups jointly; returns the best-validation model
    and the per-epoch loss curve."""
    if model.config.use_invariant and intervention_cfg is None:
        intervention_cfg = InterventionConfig()
    dtype = model.config.torch_dtype
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate,
                                 betas=(0.9, 0.999), eps=1e-8)
    train_indices = dataset.split_indices("train")
    if train_cfg.max_epochs > 0 and len(train_indices) == 0:
        raise ConfigError("training split is empty")
    has_val = len(dataset.splits["val"]) > 0

    report: list[dict] = []
    best_val = float("inf")
    best_state = None
    epochs_since_best = 0
    model.train()

    for epoch in range(train_cfg.max_epochs):
        start_time = time.perf_counter()
        order_rng = np.random.default_rng([train_cfg.seed, epoch])
        shuffled = train_indices[order_rng.permutation(len(train_indices))]
        swap_rng = (epoch_rng(intervention_cfg, epoch)
                    if model.config.use_invariant else None)

        sums = {"loss_task": 0.0, "loss_inv": 0.0, "loss_reg": 0.0, "loss_total": 0.0}
        num_batches = 0
        for batch_no, batch_idx in enumerate(iter_batches(shuffled, train_cfg.batch_size)):
            inputs, targets, _, mask = dataset.batch(batch_idx, dtype=dtype)
            loss_task_t, loss_inv_t, loss_reg_t, _ = compute_batch_losses(
                model, inputs, targets, mask, loss_cfg, intervention_cfg, swap_rng)
            _require_finite("loss_task", loss_task_t, epoch, batch_no)
            _require_finite("loss_inv", loss_inv_t, epoch, batch_no)
            _require_finite("loss_reg", loss_reg_t, epoch, batch_no)
            loss = total_loss(loss_task_t, loss_inv_t, loss_reg_t, loss_cfg)

            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip_norm)
            optimizer.step()

            sums["loss_task"] += float(loss_task_t)
            sums["loss_inv"] += float(loss_inv_t)
            sums["loss_reg"] += float(loss_reg_t)
            sums["loss_total"] += float(loss)
            num_batches += 1

        record = {"epoch": epoch}
        record.update({key: value / num_batches for key, value in sums.items()})
        record["val_mae"] = (validation_mae(model, dataset, train_cfg.batch_size)
                             if has_val else None)
        record["seconds"] = time.perf_counter() - start_time
        report.append(record)
        if log_fn is not None:
            log_fn(record)

        if has_val:
            if record["val_mae"] < best_val:
                best_val = record["val_mae"]
                best_state = copy.deepcopy(model.state_dict())
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best > train_cfg.early_stop_patience:
                    break

    if best_state is not None:
        model.load_state_dict(best_state)
    if report_path is not None:
        save_report(report, report_path)
    return model, report


def save_report(report: list[dict], path: str | Path) -> None:
    """One JSON record per epoch (JSON-lines)."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in report:
            handle.write(json.dumps(record) + "\n")


def load_report(path: str | Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def save_checkpoint(path: str | Path, model: MemFlowNet, graph: GeoGraph,
                    normalizer=None, data_meta: dict | None = None) -> None:
    """Single archive with every named parameter tensor, the full config, the
    graph, and the fitted normalizer statistics."""
    payload = {
        "model_config": model.config_dict(),
        "adjacency": graph.adjacency,
        "state_dict": model.state_dict(),
        "normalizer": (None if normalizer is None
                       else {"mean": normalizer.mean, "std": normalizer.std}),
        "data_meta": data_meta or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path):
    """Rebuild the model; the forward pass is bit-identical to the saved one."""
    from .data import Normalizer  # local import to avoid a cycle

    payload = torch.load(path, weights_only=False)
    graph = GeoGraph(payload["adjacency"])
    model = MemFlowNet(ModelConfig(**payload["model_config"]), graph)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    normalizer = None
    if payload["normalizer"] is not None:
        normalizer = Normalizer(mean=payload["normalizer"]["mean"],
                                std=payload["normalizer"]["std"])
    return model, graph, normalizer, payload.get("data_meta", {})
