"""Parameter consolidation: Fisher tables, EWC and RI smoothing penalties.

RI smoothing needs RI to depend on the parameters. Here it is recomputed
on the model's own predictions with a differentiable histogram: each value
spreads its unit mass over the bins with a Gaussian kernel whose bandwidth
equals the bin width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .distrib import DEFAULT_BINS, SMOOTHING
from .relation import DENOMINATOR_FLOOR
from .surrogate import DTYPE, Batch, ModelState, WindowBatch, forward, per_sample_gradients


@dataclass
class FisherTable:
    """Per-parameter importances anchored at the previous interval's parameters."""

    fisher: torch.Tensor
    ri_fisher: torch.Tensor
    anchor: torch.Tensor

    def __post_init__(self):
        for name in ("fisher", "ri_fisher", "anchor"):
            setattr(self, name, torch.as_tensor(getattr(self, name), dtype=DTYPE).detach().clone())
        n = self.anchor.shape[0]
        if self.fisher.shape != (n,) or self.ri_fisher.shape != (n,):
            raise ValueError("Fisher vectors must align with the anchor parameters")
        for name in ("fisher", "ri_fisher"):
            vec = getattr(self, name)
            if not torch.all(torch.isfinite(vec)) or torch.any(vec < 0):
                raise ValueError(f"{name} entries must be finite and nonnegative")

    @classmethod
    def empty(cls, n_params: int) -> "FisherTable":
        z = torch.zeros(n_params, dtype=DTYPE)
        return cls(z, z, z)


def fisher_information(state: ModelState, data: Batch, chunk: int = 64) -> torch.Tensor:
    """Empirical Fisher: mean over samples of squared per-sample loss gradients."""
    total = torch.zeros_like(state.params)
    count = 0
    for part in data:
        for start in range(0, len(part), chunk):
            sub = part.subset(np.arange(start, min(start + chunk, len(part))))
            g = per_sample_gradients(state.spec, state.params, [sub])
            total += (g * g).sum(dim=0)
            count += g.shape[0]
    if count == 0:
        raise ValueError("Fisher information needs at least one sample")
    return total / count


def quadratic_penalty(params: torch.Tensor, weights: torch.Tensor, anchor: torch.Tensor,
                      lam: float) -> torch.Tensor:
    d = params - anchor
    return lam * torch.sum(weights * d * d)


def ewc_penalty(params: torch.Tensor, table: FisherTable, lam: float) -> torch.Tensor:
    return quadratic_penalty(params, table.fisher, table.anchor, lam)


def ris_penalty(params: torch.Tensor, table: FisherTable, lam: float) -> torch.Tensor:
    return quadratic_penalty(params, table.ri_fisher, table.anchor, lam)


def total_loss(base: torch.Tensor, params: torch.Tensor, table: FisherTable | None,
               lambda_ewc: float, lambda_ris: float, use_ewc: bool = True,
               use_ris: bool = True) -> torch.Tensor:
    """Base loss plus the enabled smoothing terms; disabled terms add nothing."""
    out = base
    if table is None:
        return out
    if use_ewc and lambda_ewc != 0:
        out = out + ewc_penalty(params, table, lambda_ewc)
    if use_ris and lambda_ris != 0:
        out = out + ris_penalty(params, table, lambda_ris)
    return out


# -- differentiable RI ---------------------------------------------------------

def soft_histogram(values: torch.Tensor, lo: torch.Tensor, hi: torch.Tensor,
                   bins: int = DEFAULT_BINS, alpha: float = SMOOTHING) -> torch.Tensor:
    width = (hi - lo) / bins
    centers = lo + (torch.arange(bins, dtype=values.dtype) + 0.5) * width
    z = (values.reshape(-1, 1) - centers.reshape(1, -1)) / width
    k = torch.exp(-0.5 * z * z)
    k = k / k.sum(dim=1, keepdim=True)
    p = k.mean(dim=0) + alpha
    return p / p.sum()


def _kl(p: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    return torch.sum(p * torch.log(p / m))


def soft_jsd(a: torch.Tensor, b: torch.Tensor, bins: int = DEFAULT_BINS,
             alpha: float = SMOOTHING) -> torch.Tensor:
    """JSD of soft histograms over the shared range of both samples."""
    lo = torch.minimum(a.min(), b.min())
    hi = torch.maximum(a.max(), b.max())
    if not bool(hi > lo):
        return torch.zeros((), dtype=a.dtype)
    p = soft_histogram(a, lo, hi, bins, alpha)
    q = soft_histogram(b, lo, hi, bins, alpha)
    m = 0.5 * (p + q)
    return (0.5 * _kl(p, m) + 0.5 * _kl(q, m)).clamp_min(0.0)


def soft_mean_ri(prev: torch.Tensor, curr: torch.Tensor, targets: Sequence[int],
                 neighbours: Sequence[Sequence[int]], bins: int = DEFAULT_BINS,
                 eps: float = DENOMINATOR_FLOOR, divergence=None) -> torch.Tensor:
    """Mean RI over ``targets`` computed from per-node value rows.

    ``prev``/``curr`` are ``(n_nodes, n_values)``; ``neighbours[i]`` lists the
    row indices summed for ``targets[i]``. Targets without neighbours are
    skipped.
    """
    div = divergence or (lambda a, b: soft_jsd(a, b, bins))
    temporal: dict[int, torch.Tensor] = {}

    def tdiv(i):
        if i not in temporal:
            temporal[i] = div(curr[i], prev[i])
        return temporal[i]

    scores = []
    for v, nb in zip(targets, neighbours):
        if not nb:
            continue
        own = tdiv(v)
        terms = [tdiv(u) * own / (torch.clamp(div(curr[u], curr[v]), min=eps)
                                  * torch.clamp(div(prev[u], prev[v]), min=eps))
                 for u in sorted(nb)]
        scores.append(torch.stack(terms).sum())
    if not scores:
        return torch.zeros((), dtype=prev.dtype)
    return torch.stack(scores).mean()


@dataclass
class RiProbe:
    """Inputs for parameter-dependent RI on one interval transition.

    ``prev``/``curr`` hold windows of the persisting-node graph in both
    intervals (same node order); ``targets`` are row indices of subgraph
    members and ``neighbours`` their persisting neighbour rows.
    """

    prev: WindowBatch
    curr: WindowBatch
    targets: list[int]
    neighbours: list[list[int]]


def _predicted_rows(state_spec, flat, batch: WindowBatch) -> torch.Tensor:
    pred = forward(state_spec, flat, batch.adjacency, batch.inputs)   # S, N, D, K
    return pred.permute(1, 0, 2, 3).reshape(pred.shape[1], -1)


def soft_ri_of_params(spec, flat: torch.Tensor, probe: RiProbe, rows=None,
                      bins: int = DEFAULT_BINS) -> torch.Tensor:
    prev, curr = probe.prev, probe.curr
    if rows is not None:
        prev, curr = prev.subset(rows), curr.subset(rows)
    return soft_mean_ri(_predicted_rows(spec, flat, prev), _predicted_rows(spec, flat, curr),
                        probe.targets, probe.neighbours, bins)


def ri_fisher(state: ModelState, probe: RiProbe, n_chunks: int = 8,
              bins: int = DEFAULT_BINS) -> torch.Tensor:
    """Mean squared gradient of the subgraph-mean soft RI, one sample per window chunk."""
    n = min(len(probe.prev), len(probe.curr))
    if n == 0 or not probe.targets:
        raise ValueError("RI Fisher needs windows and a nonempty subgraph")
    chunks = [c for c in np.array_split(np.arange(n), min(n_chunks, n)) if len(c)]
    total = torch.zeros_like(state.params)
    for rows in chunks:
        flat = state.params.detach().requires_grad_(True)
        value = soft_ri_of_params(state.spec, flat, probe, rows, bins)
        if value.requires_grad:
            (g,) = torch.autograd.grad(value, flat, allow_unused=True)
            if g is not None:
                total += g * g
    return total / len(chunks)
