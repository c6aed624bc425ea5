"""Influence-curated temporal memory buffer.

Influence of up-weighting sample ``j`` of a batch ``B`` on the loss over a
held-out set ``D`` is ``-grad L(D)^T (H + damping I)^-1 grad L_j(B)`` with
``H`` the Hessian of the mean loss over ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .surrogate import (DTYPE, Batch, ModelState, WindowBatch, batch_loss, loss_and_gradients,
                        optimizer_step, per_sample_gradients)

DAMPING = 1e-3
EXACT_PARAM_CAP = 2000


class InfluenceConfigError(ValueError):
    pass


def _scores(sample_grads: torch.Tensor, test_grad: torch.Tensor, hessian: torch.Tensor | None,
            damping: float) -> torch.Tensor:
    if hessian is None:
        # damped diagonal of the squared-gradient accumulator
        diag = (sample_grads * sample_grads).mean(dim=0) + damping
        solved = test_grad / diag
    else:
        eye = torch.eye(hessian.shape[0], dtype=hessian.dtype)
        h = 0.5 * (hessian + hessian.T) + damping * eye
        solved = torch.linalg.solve(h, test_grad)
    return -(sample_grads @ solved)


def influence_scores_functional(per_sample_loss: Callable[[torch.Tensor], torch.Tensor],
                                test_loss: Callable[[torch.Tensor], torch.Tensor],
                                params: torch.Tensor, hessian_mode: str = "exact",
                                damping: float = DAMPING) -> torch.Tensor:
    """Influence scores for an arbitrary model given as loss callables of flat params.

    ``per_sample_loss(params)`` returns the vector of losses over ``B``;
    ``test_loss(params)`` the scalar loss over ``D``.
    """
    params = torch.as_tensor(params, dtype=DTYPE).detach()
    sample_grads = torch.func.jacrev(per_sample_loss)(params)
    test_grad = torch.func.grad(test_loss)(params)
    hessian = None
    if hessian_mode == "exact":
        hessian = torch.func.hessian(lambda p: per_sample_loss(p).mean())(params)
    elif hessian_mode != "diagonal":
        raise InfluenceConfigError(f"unknown hessian mode {hessian_mode!r}")
    return _scores(sample_grads, test_grad, hessian, damping)


def influence_scores(state: ModelState, b: Batch, d: Batch, hessian_mode: str = "diagonal",
                     damping: float = DAMPING, exact_cap: int = EXACT_PARAM_CAP) -> torch.Tensor:
    """Per-sample influence of ``b`` on the loss over ``d`` at the current parameters."""
    return influence_scores_many(state, b, [d], hessian_mode, damping, exact_cap)[0]


def influence_scores_many(state: ModelState, b: Batch, ds: Sequence[Batch], hessian_mode: str = "diagonal",
                          damping: float = DAMPING, exact_cap: int = EXACT_PARAM_CAP) -> list[torch.Tensor]:
    """Influence of ``b`` on each held-out set in ``ds``, sharing the per-sample gradients."""
    spec, flat = state.spec, state.params.detach()
    if hessian_mode not in ("exact", "diagonal"):
        raise InfluenceConfigError(f"unknown hessian mode {hessian_mode!r}")
    if hessian_mode == "exact" and spec.n_params > exact_cap:
        raise InfluenceConfigError(
            f"exact Hessian requested for {spec.n_params} parameters (cap {exact_cap})")
    sample_grads = per_sample_gradients(spec, flat, b)
    hessian = None
    if hessian_mode == "exact":
        hessian = torch.func.hessian(lambda p: batch_loss(spec, p, b))(flat)
    return [_scores(sample_grads, loss_and_gradients(state, d)[1], hessian, damping) for d in ds]


@dataclass(frozen=True)
class InfluenceReport:
    i_train: np.ndarray
    i_memory: np.ndarray
    gamma: float
    i_star: np.ndarray


def combine_influence(i_train, i_memory) -> InfluenceReport:
    """Merge the two influence vectors with the clamped min-norm weight ``gamma``."""
    i_train = np.asarray(i_train, dtype=np.float64)
    i_memory = np.asarray(i_memory, dtype=np.float64)
    if i_train.shape != i_memory.shape:
        raise ValueError(f"influence vectors differ in length: {i_train.shape} vs {i_memory.shape}")
    diff = i_train - i_memory
    denom = float(diff @ diff)
    if denom == 0.0:
        gamma = 1.0
    else:
        gamma = float(np.clip((diff @ i_train) / denom, 0.0, 1.0))
    i_star = gamma * i_train + (1.0 - gamma) * i_memory
    # rounding can step outside the segment by one ulp
    i_star = np.clip(i_star, np.minimum(i_train, i_memory), np.maximum(i_train, i_memory))
    return InfluenceReport(i_train, i_memory, gamma, i_star)


# -- memory buffer -------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    """One window, referenced by its pool (anything with ``.batch(rows)``) and row."""

    pool: object
    row: int


@dataclass(frozen=True)
class BufferEntry:
    timestamp_id: int
    sample: Sample
    score: float


@dataclass(frozen=True)
class MemoryBuffer:
    capacity: int
    entries: tuple[BufferEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be nonnegative")
        if len(self.entries) > self.capacity:
            raise ValueError(f"{len(self.entries)} entries exceed capacity {self.capacity}")
        ids = [e.timestamp_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate timestamp ids in buffer")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def timestamp_ids(self) -> list[int]:
        return [e.timestamp_id for e in self.entries]

    def as_batch(self, entries: Sequence[BufferEntry] | None = None) -> list[WindowBatch]:
        return samples_to_batch([e.sample for e in (self.entries if entries is None else entries)])


def grouped_batch(samples: Iterable[Sample]) -> tuple[list[WindowBatch], list[Sample]]:
    """Group samples by pool (first-seen order) into one WindowBatch per pool.

    Also returns the samples in the order the batch lays them out.
    """
    groups: dict[int, tuple[object, list[int]]] = {}
    for s in samples:
        groups.setdefault(id(s.pool), (s.pool, []))[1].append(s.row)
    ordered = [Sample(pool, r) for pool, rows in groups.values() for r in rows]
    return [pool.batch(rows) for pool, rows in groups.values()], ordered


def samples_to_batch(samples: Iterable[Sample]) -> list[WindowBatch]:
    return grouped_batch(samples)[0]


def update_buffer(buffer: MemoryBuffer, scored: Iterable[tuple[int, Sample, float]],
                  capacity: int | None = None, rank_by: str = "signed") -> MemoryBuffer:
    """Merge scored candidates into the buffer and keep the top ``capacity``.

    Candidates replace entries with the same timestamp. Ranking is by signed
    score (or ``|score|`` with ``rank_by="magnitude"``), descending; ties go
    to the older timestamp.
    """
    capacity = buffer.capacity if capacity is None else capacity
    merged = {e.timestamp_id: e for e in buffer.entries}
    for ts, sample, score in scored:
        merged[int(ts)] = BufferEntry(int(ts), sample, float(score))
    if rank_by == "signed":
        key = lambda e: (-e.score, e.timestamp_id)  # noqa: E731
    elif rank_by == "magnitude":
        key = lambda e: (-abs(e.score), e.timestamp_id)  # noqa: E731
    else:
        raise ValueError(f"unknown ranking {rank_by!r}")
    kept = sorted(merged.values(), key=key)[:capacity]
    return MemoryBuffer(capacity, tuple(kept))


def random_buffer(capacity: int, candidates: Sequence[tuple[int, Sample]],
                  rng: np.random.Generator) -> MemoryBuffer:
    """Uniformly random initial buffer drawn from ``(timestamp_id, sample)`` candidates."""
    n = min(capacity, len(candidates))
    idx = np.sort(rng.choice(len(candidates), size=n, replace=False))
    return MemoryBuffer(capacity, tuple(BufferEntry(int(candidates[i][0]), candidates[i][1], 0.0)
                                        for i in idx))


def _draw(n_pool: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(n_pool, size=size, replace=n_pool < size)


def sample_simulated_test_sets(buffer: MemoryBuffer, seen_train: Sequence[Sample], size: int,
                               rng: np.random.Generator) -> tuple[list[WindowBatch], list[WindowBatch]]:
    """Draw ``D_memory`` from the buffer and ``D_train`` from seen training samples.

    Sampling is without replacement unless a pool is smaller than ``size``.
    """
    if len(buffer) == 0 or len(seen_train) == 0:
        raise ValueError("simulated test sets need nonempty buffer and training pools")
    mem = [buffer.entries[i].sample for i in _draw(len(buffer), size, rng)]
    train = [seen_train[i] for i in _draw(len(seen_train), size, rng)]
    return samples_to_batch(mem), samples_to_batch(train)


def pseudo_update(state: ModelState, train_stream: Callable[[int], Iterable[Batch]], epochs: int,
                  lr: float) -> ModelState:
    """Plain optimisation for ``epochs`` epochs; ``train_stream(epoch)`` yields batches."""
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    for epoch in range(epochs):
        for batch in train_stream(epoch):
            _, grads = loss_and_gradients(state, batch)
            state = optimizer_step(state, grads, lr)
    return state
