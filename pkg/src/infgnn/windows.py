"""Sliding-window sample pools over one interval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .graph import FeatureTensor, IntervalGraph
from .surrogate import DTYPE, WindowBatch, normalize_adjacency

SPLIT = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class Scaler:
    """Per-feature z-score statistics."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: FeatureTensor | np.ndarray) -> "Scaler":
        values = x.values if isinstance(x, FeatureTensor) else np.asarray(x)
        mean = values.mean(axis=(0, 2))
        std = values.std(axis=(0, 2))
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[None, :, None]) / self.std[None, :, None]

    def inverse(self, values):
        """Undo scaling on ``(..., D, K)`` arrays or tensors."""
        mean = self.mean[:, None]
        std = self.std[:, None]
        if isinstance(values, torch.Tensor):
            return values * torch.as_tensor(std, dtype=values.dtype) + torch.as_tensor(mean, dtype=values.dtype)
        return values * std + mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def window_anchors(n_steps: int, input_steps: int, horizon: int, stride: int = 1) -> np.ndarray:
    last = n_steps - input_steps - horizon
    if last < 0:
        raise ValueError(f"interval of {n_steps} steps is shorter than one window "
                         f"({input_steps} + {horizon})")
    return np.arange(0, last + 1, stride)


def split_anchors(anchors: np.ndarray, split=SPLIT) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chronological train/validation/test split."""
    n = len(anchors)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return anchors[:n_train], anchors[n_train:n_train + n_val], anchors[n_train + n_val:]


class WindowPool:
    """All windows of one interval on one graph, addressable by row.

    ``timestamp_ids`` are global: ``offset + anchor``.
    """

    def __init__(self, graph: IntervalGraph, features: FeatureTensor, scaler: Scaler,
                 input_steps: int, horizon: int, anchors: np.ndarray, offset: int = 0,
                 adjacency_mode: str = "sym"):
        if features.node_order != graph.nodes:
            raise ValueError("feature rows are not aligned with the graph node order")
        self.graph = graph
        self.nodes = graph.nodes
        self.adjacency = normalize_adjacency(graph.adjacency, adjacency_mode)
        z = scaler.transform(features.values)
        span = input_steps + horizon
        anchors = np.asarray(anchors, dtype=np.int64)
        view = np.lib.stride_tricks.sliding_window_view(z, span, axis=2)  # N, D, S-span+1, span
        win = np.moveaxis(view[:, :, anchors, :], 2, 0)                    # A, N, D, span
        self.inputs = torch.as_tensor(np.ascontiguousarray(win[..., :input_steps]), dtype=DTYPE)
        self.targets = torch.as_tensor(np.ascontiguousarray(win[..., input_steps:]), dtype=DTYPE)
        self.anchors = anchors
        self.timestamp_ids = offset + anchors

    def __len__(self) -> int:
        return len(self.anchors)

    def batch(self, rows) -> WindowBatch:
        rows = np.asarray(rows, dtype=np.int64)
        t = torch.as_tensor(rows)
        return WindowBatch(self.adjacency, self.inputs[t], self.targets[t], self.timestamp_ids[rows])

    def all(self) -> WindowBatch:
        return WindowBatch(self.adjacency, self.inputs, self.targets, self.timestamp_ids)


def batch_order(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled row indices cut into consecutive batches."""
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
