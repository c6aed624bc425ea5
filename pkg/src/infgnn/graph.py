"""Dynamic spatio-temporal graph data model and graph utilities."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GraphValidationError(ValueError):
    """Raised when a graph, feature tensor or sequence violates its invariants."""

    def __init__(self, message: str, interval: int | None = None):
        self.interval = interval
        if interval is not None:
            message = f"interval {interval}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class IntervalGraph:
    """Undirected weighted graph of one time interval.

    ``nodes`` is a sorted tuple of global node ids; row/column ``i`` of
    ``adjacency`` belongs to ``nodes[i]``.
    """

    interval_index: int
    nodes: tuple[int, ...]
    adjacency: np.ndarray
    _pos: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(int(v) for v in self.nodes)
        adj = np.array(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] != len(nodes):
            raise GraphValidationError(
                f"adjacency shape {adj.shape} does not match {len(nodes)} nodes",
                self.interval_index,
            )
        if len(set(nodes)) != len(nodes):
            raise GraphValidationError("duplicate node ids", self.interval_index)
        if list(nodes) != sorted(nodes):
            order = np.argsort(nodes, kind="stable")
            nodes = tuple(nodes[i] for i in order)
            adj = adj[np.ix_(order, order)]
        if not np.all(np.isfinite(adj)) or np.any(adj < 0):
            raise GraphValidationError("adjacency must be finite and nonnegative", self.interval_index)
        if not np.array_equal(adj, adj.T):
            raise GraphValidationError("adjacency is not symmetric", self.interval_index)
        if np.any(np.diag(adj) != 0):
            raise GraphValidationError("adjacency diagonal must be zero", self.interval_index)
        adj.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "_pos", {v: i for i, v in enumerate(nodes)})

    @classmethod
    def from_edges(cls, interval_index: int, nodes: Iterable[int],
                   edges: Iterable[tuple[int, int, float]] | Iterable[tuple[int, int]]) -> "IntervalGraph":
        nodes = tuple(sorted(int(v) for v in nodes))
        pos = {v: i for i, v in enumerate(nodes)}
        adj = np.zeros((len(nodes), len(nodes)))
        for e in edges:
            u, v = int(e[0]), int(e[1])
            w = float(e[2]) if len(e) > 2 else 1.0
            if u == v:
                raise GraphValidationError(f"self loop on node {u}", interval_index)
            if u not in pos or v not in pos:
                raise GraphValidationError(f"edge ({u}, {v}) references unknown node", interval_index)
            adj[pos[u], pos[v]] = w
            adj[pos[v], pos[u]] = w
        return cls(interval_index, nodes, adj)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def node_set(self) -> frozenset[int]:
        return frozenset(self.nodes)

    @property
    def edges(self) -> set[tuple[int, int]]:
        """Unordered edges as ``(min, max)`` node-id pairs."""
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return {(self.nodes[i], self.nodes[j]) for i, j in zip(rows, cols)}

    def index_of(self, v: int) -> int:
        try:
            return self._pos[int(v)]
        except KeyError:
            raise KeyError(f"node {v} not in interval {self.interval_index}") from None

    def indices(self, nodes: Iterable[int]) -> np.ndarray:
        return np.array([self.index_of(v) for v in nodes], dtype=np.intp)

    def neighbors(self, v: int) -> list[int]:
        row = self.adjacency[self.index_of(v)]
        return [self.nodes[j] for j in np.flatnonzero(row)]


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """Node recordings of one interval, shape ``(n_nodes, n_features, n_steps)``."""

    values: np.ndarray
    node_order: tuple[int, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        node_order = tuple(int(v) for v in self.node_order)
        if values.ndim != 3 or values.shape[0] != len(node_order):
            raise GraphValidationError(
                f"feature shape {values.shape} does not match {len(node_order)} nodes")
        if not np.all(np.isfinite(values)):
            raise GraphValidationError("features contain non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "node_order", node_order)

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[2]

    def rows(self, nodes: Iterable[int]) -> np.ndarray:
        pos = {v: i for i, v in enumerate(self.node_order)}
        return self.values[[pos[int(v)] for v in nodes]]

    def series(self, v: int) -> np.ndarray:
        """All recorded values of node ``v`` flattened over features and steps."""
        return self.rows([v])[0].ravel()


@dataclass(frozen=True, eq=False)
class Interval:
    graph: IntervalGraph
    features: FeatureTensor

    @property
    def index(self) -> int:
        return self.graph.interval_index


class DynamicGraphSequence:
    """Ordered intervals ``G_1..G_T`` with aligned feature tensors."""

    def __init__(self, intervals: Sequence[Interval], metadata: dict | None = None):
        self.intervals = tuple(intervals)
        self.metadata = dict(metadata or {})
        validate_sequence(self)

    def __len__(self) -> int:
        return len(self.intervals)

    def __getitem__(self, i: int) -> Interval:
        return self.intervals[i]

    def __iter__(self):
        return iter(self.intervals)

    @property
    def n_features(self) -> int:
        return self.intervals[0].features.n_features


def validate_interval(interval: Interval) -> None:
    g, x = interval.graph, interval.features
    if x.node_order != g.nodes:
        if sorted(x.node_order) != list(g.nodes):
            raise GraphValidationError("feature nodes do not match graph nodes", g.interval_index)
        raise GraphValidationError("feature node order differs from adjacency order", g.interval_index)
    if x.values.shape[0] != g.n_nodes:
        raise GraphValidationError(
            f"feature rows {x.values.shape[0]} != adjacency dimension {g.n_nodes}", g.interval_index)


def validate_sequence(seq: DynamicGraphSequence) -> None:
    prev = None
    for interval in seq.intervals:
        validate_interval(interval)
        if prev is not None:
            if interval.index <= prev.index:
                raise GraphValidationError("interval indices must be strictly increasing", interval.index)
            if not (prev.graph.node_set & interval.graph.node_set):
                raise GraphValidationError("no persisting nodes with previous interval", interval.index)
            if interval.features.n_features != prev.features.n_features:
                raise GraphValidationError("feature dimension changed", interval.index)
        prev = interval


def node_churn(prev: IntervalGraph, curr: IntervalGraph) -> tuple[set[int], set[int], set[int]]:
    """Return ``(persisting, added, removed)`` node sets between two intervals."""
    a, b = set(prev.nodes), set(curr.nodes)
    return a & b, b - a, a - b


def k_hop_neighbors(g: IntervalGraph, v: int, k: int = 1, within: Iterable[int] | None = None) -> set[int]:
    """Nodes at shortest-path distance 1..k from ``v`` (BFS over nonzero edges).

    When ``within`` is given, the search runs on the subgraph induced by it.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    start = g.index_of(v)
    allowed = None if within is None else {g.index_of(u) for u in within if u in g._pos}
    if allowed is not None:
        allowed.add(start)
    adj = g.adjacency
    dist = {start: 0}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        if dist[i] == k:
            continue
        for j in np.flatnonzero(adj[i]):
            j = int(j)
            if j in dist or (allowed is not None and j not in allowed):
                continue
            dist[j] = dist[i] + 1
            queue.append(j)
    return {g.nodes[i] for i in dist if i != start}


def hop_distances(g: IntervalGraph, v: int) -> dict[int, int]:
    """Unweighted shortest-path hop counts from ``v`` to every reachable node."""
    start = g.index_of(v)
    dist = {start: 0}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(g.adjacency[i]):
            j = int(j)
            if j not in dist:
                dist[j] = dist[i] + 1
                queue.append(j)
    return {g.nodes[i]: d for i, d in dist.items()}


def induced_subgraph(g: IntervalGraph, keep: Iterable[int]) -> IntervalGraph:
    keep = sorted(set(int(v) for v in keep))
    missing = [v for v in keep if v not in g._pos]
    if missing:
        raise ValueError(f"nodes {missing[:5]} are not in interval {g.interval_index}")
    idx = g.indices(keep)
    return IntervalGraph(g.interval_index, tuple(keep), g.adjacency[np.ix_(idx, idx)].copy())


def persisting_subgraph(prev: IntervalGraph, curr: IntervalGraph, keep: Iterable[int]) -> IntervalGraph:
    """Subgraph of ``curr`` induced by ``keep`` with only edges present in both intervals."""
    sub = induced_subgraph(curr, keep)
    prev_sub = induced_subgraph(prev, keep)
    adj = np.where(prev_sub.adjacency > 0, sub.adjacency, 0.0)
    return IntervalGraph(curr.interval_index, sub.nodes, adj)


def crop_features(x: FeatureTensor, nodes: Sequence[int]) -> FeatureTensor:
    nodes = tuple(nodes)
    return FeatureTensor(x.rows(nodes), nodes)
