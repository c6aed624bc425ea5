"""Relation Importance scoring, informative-subgraph selection and neighbors merging."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .distrib import DEFAULT_BINS, jsd_samples
from .graph import (FeatureTensor, IntervalGraph, k_hop_neighbors, node_churn,
                    persisting_subgraph)

DENOMINATOR_FLOOR = 1e-8
# nodes without persisting neighbours rank after every scored node
ISOLATED_SCORE = float(np.finfo(np.float64).max)

Divergence = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class RiScoreTable:
    interval_pair: tuple[int, int]
    scores: dict
    k: int

    def __post_init__(self):
        for v, s in self.scores.items():
            if not (np.isfinite(s) and s >= 0):
                raise ValueError(f"invalid RI score {s} for node {v}")

    def ranked(self) -> list[int]:
        """Node ids ordered by ascending score, ties by ascending id."""
        return sorted(self.scores, key=lambda v: (self.scores[v], v))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "score"])
            for v in sorted(self.scores):
                w.writerow([v, repr(float(self.scores[v]))])


class _DivergenceCache:
    def __init__(self, x_prev: FeatureTensor, x_curr: FeatureTensor, divergence: Divergence):
        self.x_prev, self.x_curr, self.div = x_prev, x_curr, divergence
        self._temporal: dict[int, float] = {}
        self._spatial: dict[tuple[int, int], tuple[float, float]] = {}

    def temporal(self, v: int) -> float:
        if v not in self._temporal:
            self._temporal[v] = self.div(self.x_curr.series(v), self.x_prev.series(v))
        return self._temporal[v]

    def spatial(self, u: int, v: int) -> tuple[float, float]:
        key = (u, v) if u < v else (v, u)
        if key not in self._spatial:
            a, b = key
            self._spatial[key] = (self.div(self.x_curr.series(a), self.x_curr.series(b)),
                                  self.div(self.x_prev.series(a), self.x_prev.series(b)))
        return self._spatial[key]


def _ri(v: int, neighbours: Iterable[int], cache: _DivergenceCache, eps: float) -> float:
    neighbours = sorted(neighbours)
    if not neighbours:
        return ISOLATED_SCORE
    own = cache.temporal(v)
    total = 0.0
    for u in neighbours:
        d_curr, d_prev = cache.spatial(u, v)
        total += cache.temporal(u) * own / (max(d_curr, eps) * max(d_prev, eps))
    return min(total, ISOLATED_SCORE)


def relation_importance(v: int, g_prev: IntervalGraph, g_curr: IntervalGraph,
                        x_prev: FeatureTensor, x_curr: FeatureTensor, k: int = 1,
                        bins: int = DEFAULT_BINS, divergence: Divergence | None = None,
                        eps: float = DENOMINATOR_FLOOR) -> float:
    """RI score of one persisting node; lower means stabler and more informative."""
    persisting, _, _ = node_churn(g_prev, g_curr)
    if v not in persisting:
        raise ValueError(f"node {v} does not persist between intervals "
                         f"{g_prev.interval_index} and {g_curr.interval_index}")
    div = divergence or (lambda a, b: jsd_samples(a, b, bins))
    cache = _DivergenceCache(x_prev, x_curr, div)
    return _ri(v, k_hop_neighbors(g_curr, v, k, within=persisting), cache, eps)


def score_nodes(g_prev: IntervalGraph, g_curr: IntervalGraph, x_prev: FeatureTensor,
                x_curr: FeatureTensor, k: int = 1, bins: int = DEFAULT_BINS,
                divergence: Divergence | None = None, eps: float = DENOMINATOR_FLOOR) -> RiScoreTable:
    """RI scores for every node persisting from ``g_prev`` to ``g_curr``."""
    persisting, _, _ = node_churn(g_prev, g_curr)
    div = divergence or (lambda a, b: jsd_samples(a, b, bins))
    cache = _DivergenceCache(x_prev, x_curr, div)
    scores = {v: _ri(v, k_hop_neighbors(g_curr, v, k, within=persisting), cache, eps)
              for v in sorted(persisting)}
    return RiScoreTable((g_prev.interval_index, g_curr.interval_index), scores, k)


def subgraph_size(fraction: float, n_nodes: int) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    return max(1, int(np.floor(fraction * n_nodes)))


def select_informative_subgraph(table: RiScoreTable, g_prev: IntervalGraph, g_curr: IntervalGraph,
                                fraction: float) -> tuple[set[int], IntervalGraph]:
    """Keep the ``max(1, floor(fraction * N_t))`` lowest-RI persisting nodes.

    The returned graph only carries edges present in both intervals.
    """
    if not table.scores:
        raise ValueError("empty RI table")
    n_keep = min(subgraph_size(fraction, g_curr.n_nodes), len(table.scores))
    keep = set(table.ranked()[:n_keep])
    return keep, persisting_subgraph(g_prev, g_curr, keep)


def random_subgraph(persisting: Iterable[int], g_prev: IntervalGraph, g_curr: IntervalGraph,
                    fraction: float, rng: np.random.Generator) -> tuple[set[int], IntervalGraph]:
    """Uniformly random persisting nodes of the same size as the informative subgraph."""
    pool = np.array(sorted(persisting))
    n_keep = min(subgraph_size(fraction, g_curr.n_nodes), pool.size)
    keep = {int(v) for v in rng.choice(pool, size=n_keep, replace=False)}
    return keep, persisting_subgraph(g_prev, g_curr, keep)


def neighbors_merge(new_nodes: Iterable[int], g_curr: IntervalGraph, base_nodes: Iterable[int],
                    x_curr: FeatureTensor, k: int = 1,
                    base_graph: IntervalGraph | None = None) -> tuple[IntervalGraph, FeatureTensor]:
    """Append new nodes to the subgraph with series simulated from subgraph members.

    Each new node gets the per-(feature, step) mean over its k-hop neighbours
    inside ``base_nodes`` (all of ``base_nodes`` when it has none) and keeps
    its true edges into the base set. ``base_graph`` defaults to the subgraph
    of ``g_curr`` induced by ``base_nodes``.
    """
    base = sorted(set(int(v) for v in base_nodes))
    if not base:
        raise ValueError("neighbors merging needs a nonempty base node set")
    new = sorted(set(int(v) for v in new_nodes) - set(base))
    base_rows = x_curr.rows(base)
    pos = {v: i for i, v in enumerate(base)}
    simulated = []
    for v in new:
        near = sorted(k_hop_neighbors(g_curr, v, k) & set(base))
        rows = base_rows[[pos[u] for u in near]] if near else base_rows
        simulated.append(rows.mean(axis=0))

    nodes = tuple(sorted(base + new))
    order = {v: i for i, v in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)))
    if base_graph is None:
        bidx = g_curr.indices(base)
        base_adj = g_curr.adjacency[np.ix_(bidx, bidx)]
    else:
        base_adj = base_graph.adjacency[np.ix_(base_graph.indices(base), base_graph.indices(base))]
    bi = [order[v] for v in base]
    adj[np.ix_(bi, bi)] = base_adj
    for v in new:
        for u in base:
            w = g_curr.adjacency[g_curr.index_of(v), g_curr.index_of(u)]
            if w > 0:
                adj[order[v], order[u]] = adj[order[u], order[v]] = w

    values = np.empty((len(nodes),) + x_curr.values.shape[1:])
    for v, row in zip(base, base_rows):
        values[order[v]] = row
    for v, row in zip(new, simulated):
        values[order[v]] = row
    return IntervalGraph(g_curr.interval_index, nodes, adj), FeatureTensor(values, nodes)
