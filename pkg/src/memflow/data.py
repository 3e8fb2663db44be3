"""Dataset ingestion, normalization, windowing, chronological splitting, and
synthetic distribution-shift generation.

Directory format:
  meta.json      -- {"num_nodes": N, "num_features": k, "interval_minutes": m,
                     "mask_zeros": bool (optional)}
  features.csv   -- T_total lines of N*k comma-separated reals, node-major
                    then feature (n0f0,n0f1,...,n1f0,...), no header
  adjacency.csv  -- N lines of N comma-separated nonnegative reals, no header
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .exceptions import ConfigError, ContractError, DataError
from .graphs import GeoGraph, build_transitions, load_adjacency_csv

DEFAULT_FRACTIONS = (0.6, 0.1, 0.1, 0.1, 0.1)
SPLIT_NAMES = ("train", "val", "test0", "test1", "test2")
TEST_SPLITS = ("test0", "test1", "test2")


@dataclass
class RawSeries:
    """Observed flow tensor (T_total, N, k) plus dataset-level flags."""

    values: np.ndarray
    interval_minutes: int
    mask_zeros: bool = False
    node_meta: dict | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise DataError(f"series must be (T_total, N, k), got shape {values.shape}")
        self.values = values

    @property
    def total_steps(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def num_features(self) -> int:
        return self.values.shape[2]


@dataclass
class FlowTensor:
    """Flow values tagged with their unit space so denormalization happens
    exactly once."""

    values: np.ndarray
    space: str = "normalized"  # "normalized" | "raw"


@dataclass
class Normalizer:
    """Per-feature-channel z-score statistics fitted on the training range.

    Channels with zero standard deviation are left unscaled (mean 0, std 1)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        mean = values.mean(axis=(0, 1))
        std = values.std(axis=(0, 1))
        degenerate = std == 0
        if degenerate.any():
            warnings.warn(
                f"channels {np.flatnonzero(degenerate).tolist()} have zero variance; "
                "left unscaled", stacklevel=2)
            mean = np.where(degenerate, 0.0, mean)
            std = np.where(degenerate, 1.0, std)
        return cls(mean=mean, std=std)

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def denormalize_flow(self, flow: FlowTensor) -> FlowTensor:
        if flow.space != "normalized":
            raise ContractError(f"tensor already in {flow.space!r} space")
        return FlowTensor(self.denormalize(flow.values), space="raw")


@dataclass
class WindowedDataset:
    """Sliding windows over a raw series with chronological named splits.

    Window w reads input steps [w, w+T) and target steps [w+T, w+2T).
    """

    raw: np.ndarray
    normalized: np.ndarray
    window: int
    splits: dict[str, range]
    normalizer: Normalizer
    mask_zeros: bool = False
    graph: GeoGraph | None = None
    num_windows: int = field(init=False)

    def __post_init__(self):
        self.num_windows = self.raw.shape[0] - 2 * self.window + 1

    @property
    def num_nodes(self) -> int:
        return self.raw.shape[1]

    @property
    def num_features(self) -> int:
        return self.raw.shape[2]

    def split_indices(self, name: str) -> np.ndarray:
        return np.asarray(list(self.splits[name]), dtype=np.int64)

    def batch(self, starts: np.ndarray, dtype: torch.dtype = torch.float32):
        """Assemble (inputs, targets, raw_targets, mask) tensors for the given
        window starts; inputs/targets normalized, mask from the raw targets."""
        starts = np.asarray(starts)
        window = self.window
        idx_in = starts[:, None] + np.arange(window)[None, :]
        idx_out = idx_in + window
        inputs = torch.as_tensor(self.normalized[idx_in], dtype=dtype)
        targets = torch.as_tensor(self.normalized[idx_out], dtype=dtype)
        raw_targets = torch.as_tensor(self.raw[idx_out], dtype=dtype)
        mask = raw_targets != 0 if self.mask_zeros else torch.ones_like(raw_targets, dtype=torch.bool)
        return inputs, targets, raw_targets, mask


def load_dataset(path) -> tuple[RawSeries, GeoGraph]:
    """Parse a dataset directory and validate shapes against its meta."""
    root = Path(path)
    meta_path = root / "meta.json"
    features_path = root / "features.csv"
    adjacency_path = root / "adjacency.csv"
    for required in (meta_path, features_path, adjacency_path):
        if not required.exists():
            raise DataError(f"missing dataset file: {required}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("num_nodes", "num_features", "interval_minutes"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing key {key!r}")
    num_nodes = int(meta["num_nodes"])
    num_features = int(meta["num_features"])

    rows = []
    width = num_nodes * num_features
    with open(features_path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != width:
                raise DataError(
                    f"{features_path}: row {line_no} has {len(cells)} values, "
                    f"expected N*k = {width}")
            try:
                rows.append(np.array([float(cell) for cell in cells]))
            except ValueError as exc:
                raise DataError(f"{features_path}: row {line_no}: non-numeric cell ({exc})") from exc
    if not rows:
        raise DataError(f"{features_path}: empty features file, T_total = 0")
    values = np.stack(rows).reshape(len(rows), num_nodes, num_features)

    graph = load_adjacency_csv(adjacency_path)
    if graph.num_nodes != num_nodes:
        raise DataError(
            f"{adjacency_path}: adjacency is {graph.num_nodes}x{graph.num_nodes} "
            f"but meta declares num_nodes = {num_nodes}")
    series = RawSeries(values=values,
                       interval_minutes=int(meta["interval_minutes"]),
                       mask_zeros=bool(meta.get("mask_zeros", False)))
    return series, graph


def split_boundaries(num_windows: int, fractions=DEFAULT_FRACTIONS) -> dict[str, range]:
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    if len(fractions) != len(SPLIT_NAMES):
        raise ConfigError(f"expected {len(SPLIT_NAMES)} split fractions, got {len(fractions)}")
    cuts = [0]
    cumulative = 0.0
    for fraction in fractions[:-1]:
        cumulative += fraction
        cuts.append(int(np.floor(num_windows * cumulative + 1e-12)))
    cuts.append(num_windows)
    return {name: range(cuts[i], cuts[i + 1]) for i, name in enumerate(SPLIT_NAMES)}


def make_windows(raw: RawSeries, window: int, fractions=DEFAULT_FRACTIONS,
                 graph: GeoGraph | None = None,
                 mask_zeros: bool | None = None) -> WindowedDataset:
    """Stride-1 sliding windows with chronological train/val/test0-2 splits and
    z-score normalization fitted on the steps covered by training inputs."""
    if 2 * window > raw.total_steps:
        raise DataError(
            f"series of {raw.total_steps} steps is too short for window {window} "
            f"(needs at least {2 * window})")
    num_windows = raw.total_steps - 2 * window + 1
    splits = split_boundaries(num_windows, fractions)
    train_end = splits["train"].stop
    fit_steps = max(train_end + window - 1, 1)
    normalizer = Normalizer.fit(raw.values[:fit_steps])
    return WindowedDataset(
        raw=raw.values,
        normalized=normalizer.normalize(raw.values),
        window=window,
        splits=splits,
        normalizer=normalizer,
        mask_zeros=raw.mask_zeros if mask_zeros is None else mask_zeros,
        graph=graph,
    )


@dataclass
class SyntheticConfig:
    num_nodes: int = 10
    total_steps: int = 480
    num_features: int = 1
    shift_profile: str = "mean_shift"  # mean_shift | trend_break | amplitude
    shift_magnitude: float = 2.0
    shift_fraction: float = 0.7
    period: int = 24
    noise_scale: float = 0.3
    graph_radius: float = 0.45
    interval_minutes: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.num_nodes < 4:
            raise ConfigError(f"synthetic generator needs num_nodes >= 4, got {self.num_nodes}")
        if self.shift_profile not in ("mean_shift", "trend_break", "amplitude"):
            raise ConfigError(f"unknown shift profile {self.shift_profile!r}")
        if not 0.0 < self.shift_fraction < 1.0:
            raise ConfigError("shift_fraction must lie in (0, 1)")


def generate_synthetic(config: SyntheticConfig) -> tuple[RawSeries, GeoGraph]:
    """Random geometric graph with node-specific daily periodic flows plus
    graph-diffused noise; the configured shift profile kicks in after
    shift_fraction of the steps on the first half of the nodes.

    Profiles: mean_shift adds the magnitude (neutral 0), trend_break adds
    magnitude per period of elapsed time (neutral 0), amplitude rescales the
    periodic component by the magnitude (neutral 1).
    """
    rng = np.random.default_rng(config.seed)
    n, total, k = config.num_nodes, config.total_steps, config.num_features

    points = rng.uniform(0.0, 1.0, size=(n, 2))
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    adjacency = ((dist > 0) & (dist <= config.graph_radius)).astype(np.float64)
    np.fill_diagonal(adjacency, 0.0)
    graph = GeoGraph(adjacency)

    t = np.arange(total)[:, None, None]
    offset = rng.uniform(4.0, 8.0, size=(1, n, k))
    amp1 = rng.uniform(0.8, 1.6, size=(1, n, k))
    amp2 = rng.uniform(0.2, 0.6, size=(1, n, k))
    phase1 = rng.uniform(0.0, 2 * np.pi, size=(1, n, k))
    phase2 = rng.uniform(0.0, 2 * np.pi, size=(1, n, k))
    omega = 2 * np.pi / config.period
    periodic = amp1 * np.sin(omega * t + phase1) + amp2 * np.sin(2 * omega * t + phase2)

    noise = rng.normal(0.0, 1.0, size=(total, n, k)) * config.noise_scale
    if config.noise_scale > 0:
        forward = build_transitions(graph).forward.numpy()
        noise = 0.5 * noise + 0.5 * np.einsum("nm,tmk->tnk", forward, noise)

    shift_start = int(np.floor(config.shift_fraction * total))
    shifted_nodes = np.arange(n // 2)
    if config.shift_profile == "mean_shift":
        shift = np.zeros((total, n, k))
        shift[shift_start:, shifted_nodes] = config.shift_magnitude
        periodic = periodic + shift
    elif config.shift_profile == "trend_break":
        ramp = np.zeros((total, 1, 1))
        ramp[shift_start:, 0, 0] = (np.arange(total - shift_start)) / config.period
        shift = np.zeros((total, n, k))
        shift[:, shifted_nodes] = (config.shift_magnitude * ramp)
        periodic = periodic + shift
    else:  # amplitude
        scale = np.ones((total, n, k))
        scale[shift_start:, shifted_nodes] = config.shift_magnitude
        periodic = periodic * scale

    values = offset + periodic + noise
    series = RawSeries(
        values=values,
        interval_minutes=config.interval_minutes,
        mask_zeros=False,
        node_meta={"shifted_nodes": shifted_nodes.tolist(),
                   "shift_start": shift_start,
                   "shift_profile": config.shift_profile},
    )
    return series, graph


def write_dataset(path, series: RawSeries, graph: GeoGraph) -> Path:
    """Write a dataset directory in the ingestion format (full f64 precision)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_nodes": series.num_nodes,
        "num_features": series.num_features,
        "interval_minutes": series.interval_minutes,
        "mask_zeros": series.mask_zeros,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    flat = series.values.reshape(series.total_steps, -1)
    np.savetxt(root / "features.csv", flat, delimiter=",", fmt="%.17g")
    np.savetxt(root / "adjacency.csv", graph.adjacency, delimiter=",", fmt="%.17g")
    return root
