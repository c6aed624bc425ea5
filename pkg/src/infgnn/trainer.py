"""Continual training over a sequence of intervals.

Each interval: score persisting nodes, keep the informative subgraph, merge
new nodes into it, then train with a replayed memory buffer whose contents
are re-ranked by influence once the pseudo-update epochs are over. The loss
adds EWC and RI-smoothing penalties anchored at the previous interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .consolidation import FisherTable, RiProbe, fisher_information, ri_fisher, total_loss
from .evaluation import MAPE_FLOOR, MetricRecord, evaluate_transition
from .graph import (DynamicGraphSequence, FeatureTensor, Interval, IntervalGraph, crop_features,
                    induced_subgraph, k_hop_neighbors, node_churn)
from .influence import (MemoryBuffer, Sample, combine_influence, grouped_batch, influence_scores_many,
                        random_buffer, sample_simulated_test_sets, update_buffer)
from .relation import (RiScoreTable, neighbors_merge, random_subgraph, score_nodes,
                       select_informative_subgraph)
from .surrogate import (ModelSpec, ModelState, batch_loss, loss_and_gradients, optimizer_step)
from .windows import Scaler, WindowPool, batch_order, split_anchors, window_anchors


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    input_steps: int = 12
    horizon: int = 12
    epochs: int = 50
    pseudo_epochs: int = 45
    batch_size: int = 128
    memory_fraction: float = 0.25
    lr: float = 0.01
    buffer_capacity: int = 1000
    subgraph_fraction: float = 0.10
    k_hop: int = 1
    lambda_ewc: float = 0.5
    lambda_ris: float = 0.5
    sim_set_size: int = 100
    seed: int = 0
    hidden: int = 64
    kernel_width: int = 3
    damping: float = 1e-3
    hessian_mode: str = "diagonal"
    exact_cap: int = 2000
    buffer_ranking: str = "signed"
    bins: int = 64
    ri_chunks: int = 8
    fisher_on_full: bool = False
    adjacency_mode: str = "sym"
    mape_floor: float = MAPE_FLOOR
    use_subgraph: bool = True
    informative_subgraph: bool = True
    use_buffer: bool = True
    informative_buffer: bool = True
    use_ris: bool = True
    use_ewc: bool = True

    def __post_init__(self):
        positive = ("input_steps", "horizon", "epochs", "batch_size", "buffer_capacity", "k_hop",
                    "sim_set_size", "hidden", "bins", "ri_chunks", "exact_cap")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 <= self.pseudo_epochs < self.epochs:
            raise ConfigError(f"pseudo_epochs must satisfy 0 <= N < epochs "
                              f"(got N={self.pseudo_epochs}, epochs={self.epochs})")
        for name in ("lambda_ewc", "lambda_ris", "damping", "mape_floor"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0 < self.lr:
            raise ConfigError("lr must be positive")
        if not 0 < self.subgraph_fraction <= 1:
            raise ConfigError("subgraph_fraction must lie in (0, 1]")
        if not 0 <= self.memory_fraction < 1:
            raise ConfigError("memory_fraction must lie in [0, 1)")
        if self.hessian_mode not in ("exact", "diagonal"):
            raise ConfigError(f"hessian_mode must be 'exact' or 'diagonal', got {self.hessian_mode!r}")
        if self.buffer_ranking not in ("signed", "magnitude"):
            raise ConfigError("buffer_ranking must be 'signed' or 'magnitude'")
        if self.adjacency_mode not in ("sym", "raw"):
            raise ConfigError("adjacency_mode must be 'sym' or 'raw'")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_spec(self, n_features: int) -> ModelSpec:
        return ModelSpec(n_features, self.input_steps, self.horizon, self.hidden, self.kernel_width)

    @property
    def memory_slots(self) -> int:
        return int(math.floor(self.memory_fraction * self.batch_size)) if self.use_buffer else 0


ABLATIONS = {
    "full": {},
    "wo_sg": {"use_subgraph": False},
    "wo_ifg": {"informative_subgraph": False},
    "wo_mb": {"use_buffer": False},
    "wo_ifs": {"informative_buffer": False},
    "wo_ris": {"use_ris": False},
    "plain": {"use_subgraph": False, "use_buffer": False, "use_ris": False, "use_ewc": False,
              "lambda_ewc": 0.0, "lambda_ris": 0.0},
}


def apply_ablation(cfg: TrainConfig, tag: str) -> TrainConfig:
    if tag not in ABLATIONS:
        raise ConfigError(f"unknown ablation {tag!r}; choose from {sorted(ABLATIONS)}")
    return replace(cfg, **ABLATIONS[tag])


@dataclass
class Streams:
    """Independent seeded generators so toggling one component does not shift another's draws."""

    data: np.random.Generator
    buffer: np.random.Generator
    subgraph: np.random.Generator
    influence: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)))


def interval_offsets(seq: DynamicGraphSequence) -> list[int]:
    """Global time index of each interval's first step."""
    out, acc = [], 0
    for iv in seq:
        out.append(acc)
        acc += iv.features.n_steps
    return out


def train_anchors(n_steps: int, cfg: TrainConfig) -> np.ndarray:
    return split_anchors(window_anchors(n_steps, cfg.input_steps, cfg.horizon))[0]


@dataclass
class TrainingGraph:
    graph: IntervalGraph
    features: FeatureTensor
    subgraph_nodes: set[int]          # persisting nodes kept (empty when the full graph is used)
    merged_nodes: set[int]
    ri_table: RiScoreTable | None = None


def build_training_graph(prev: Interval | None, curr: Interval, cfg: TrainConfig,
                         rng: np.random.Generator) -> TrainingGraph:
    """Subgraph plus merged new nodes, or the full interval graph when that is disabled."""
    if prev is None or not cfg.use_subgraph:
        return TrainingGraph(curr.graph, curr.features, set(), set())
    persisting, added, _ = node_churn(prev.graph, curr.graph)
    table = None
    if cfg.informative_subgraph:
        table = score_nodes(prev.graph, curr.graph, prev.features, curr.features, cfg.k_hop, cfg.bins)
        keep, sub = select_informative_subgraph(table, prev.graph, curr.graph, cfg.subgraph_fraction)
    else:
        keep, sub = random_subgraph(persisting, prev.graph, curr.graph, cfg.subgraph_fraction, rng)
    if added:
        graph, feats = neighbors_merge(added, curr.graph, keep, curr.features, cfg.k_hop, base_graph=sub)
    else:
        graph, feats = sub, crop_features(curr.features, sub.nodes)
    return TrainingGraph(graph, feats, keep, set(added), table)


def _ri_probe(prev: Interval, curr: Interval, targets: set[int], scaler: Scaler,
              cfg: TrainConfig) -> RiProbe | None:
    persisting, _, _ = node_churn(prev.graph, curr.graph)
    nodes = sorted(persisting)
    pos = {v: i for i, v in enumerate(nodes)}
    tgt, nbrs = [], []
    for v in sorted(targets):
        nb = k_hop_neighbors(curr.graph, v, cfg.k_hop, within=persisting)
        if nb:
            tgt.append(pos[v])
            nbrs.append(sorted(pos[u] for u in nb))
    if not tgt:
        return None

    def pool(iv: Interval) -> WindowPool:
        # non-overlapping windows cover the interval once
        anchors = window_anchors(iv.features.n_steps, cfg.input_steps, cfg.horizon, stride=cfg.horizon)
        return WindowPool(induced_subgraph(iv.graph, nodes), crop_features(iv.features, nodes), scaler,
                          cfg.input_steps, cfg.horizon, anchors, adjacency_mode=cfg.adjacency_mode)

    return RiProbe(pool(prev).all(), pool(curr).all(), tgt, nbrs)


@dataclass
class IntervalLog:
    interval: int
    losses: list[float] = field(default_factory=list)
    window_ids: list[np.ndarray] = field(default_factory=list)
    buffer_history: list[tuple[int, int, float]] = field(default_factory=list)
    gammas: list[float] = field(default_factory=list)
    influence_calls: int = 0


def _seen_samples(pool: WindowPool, seen: np.ndarray) -> list[Sample]:
    return [Sample(pool, int(r)) for r in np.flatnonzero(seen)]


def train_interval(state: ModelState, prev: Interval | None, curr: Interval, buffer: MemoryBuffer | None,
                   fisher: FisherTable | None, cfg: TrainConfig, scaler: Scaler, streams: Streams,
                   offset: int = 0, epoch_base: int = 0):
    """Train on one interval.

    Returns ``(state, buffer, fisher_table, training_graph, log)``; the Fisher
    table is anchored at the parameters this interval ends with.
    """
    tg = build_training_graph(prev, curr, cfg, streams.subgraph)
    pool = WindowPool(tg.graph, tg.features, scaler, cfg.input_steps, cfg.horizon,
                      train_anchors(curr.features.n_steps, cfg), offset, cfg.adjacency_mode)
    log = IntervalLog(curr.index)
    if cfg.use_buffer and buffer is None:
        cands = [(int(pool.timestamp_ids[r]), Sample(pool, r)) for r in range(len(pool))]
        buffer = random_buffer(cfg.buffer_capacity, cands, streams.buffer)

    n_mem = cfg.memory_slots
    train_size = cfg.batch_size - n_mem
    seen = np.zeros(len(pool), dtype=bool)
    smoothing = fisher if (cfg.use_ewc or cfg.use_ris) else None

    for epoch in range(cfg.epochs):
        scoring = cfg.use_buffer and epoch >= cfg.pseudo_epochs
        totals: dict[int, list] = {}
        for rows in batch_order(len(pool), train_size, streams.data):
            seen[rows] = True
            train_samples = [Sample(pool, int(r)) for r in rows]
            mem_samples = []
            if n_mem and len(buffer):
                pick = streams.buffer.choice(len(buffer), size=min(n_mem, len(buffer)), replace=False)
                mem_samples = [buffer.entries[i].sample for i in pick]
            batch, ordered = grouped_batch(mem_samples + train_samples)
            log.window_ids.append(np.concatenate([b.timestamp_ids for b in batch]))

            if scoring and cfg.informative_buffer:
                d_mem, d_train = sample_simulated_test_sets(buffer, _seen_samples(pool, seen),
                                                            cfg.sim_set_size, streams.influence)
                kw = dict(hessian_mode=cfg.hessian_mode, damping=cfg.damping, exact_cap=cfg.exact_cap)
                i_train, i_mem = influence_scores_many(state, batch, [d_train, d_mem], **kw)
                report = combine_influence(i_train.numpy(), i_mem.numpy())
                log.influence_calls += 1
                log.gammas.append(report.gamma)
                for s, score in zip(ordered, report.i_star):
                    slot = totals.setdefault(int(s.pool.timestamp_ids[s.row]), [0.0, 0, s])
                    slot[0] += float(score)
                    slot[1] += 1
            elif scoring:
                for s in ordered:
                    totals.setdefault(int(s.pool.timestamp_ids[s.row]), [0.0, 0, s])

            state, loss = _step(state, batch, smoothing, cfg)
            log.losses.append(loss)

        if scoring:
            if cfg.informative_buffer:
                scored = [(ts, s, total / n) for ts, (total, n, s) in sorted(totals.items())]
            else:
                ts_sorted = sorted(totals)
                draws = streams.influence.random(len(ts_sorted))
                scored = [(ts, totals[ts][2], float(u)) for ts, u in zip(ts_sorted, draws)]
            buffer = update_buffer(buffer, scored, rank_by=cfg.buffer_ranking)
            log.buffer_history.extend((epoch_base + epoch, e.timestamp_id, e.score) for e in buffer.entries)

    table = _next_fisher(state, prev, curr, tg, pool, scaler, cfg)
    return state, buffer, table, tg, log


def _step(state: ModelState, batch, smoothing: FisherTable | None, cfg: TrainConfig):
    flat = state.params.detach().requires_grad_(True)
    base = batch_loss(state.spec, flat, batch)
    value = total_loss(base, flat, smoothing, cfg.lambda_ewc, cfg.lambda_ris, cfg.use_ewc, cfg.use_ris)
    (grad,) = torch.autograd.grad(value, flat)
    return optimizer_step(state, grad.detach(), cfg.lr), value.item()


def _next_fisher(state: ModelState, prev: Interval | None, curr: Interval, tg: TrainingGraph,
                 pool: WindowPool, scaler: Scaler, cfg: TrainConfig) -> FisherTable | None:
    if not (cfg.use_ewc or cfg.use_ris):
        return None
    n = state.spec.n_params
    fisher = torch.zeros(n, dtype=state.params.dtype)
    if cfg.use_ewc and cfg.lambda_ewc > 0:
        data = pool
        if cfg.fisher_on_full:
            data = WindowPool(curr.graph, curr.features, scaler, cfg.input_steps, cfg.horizon,
                              pool.anchors, adjacency_mode=cfg.adjacency_mode)
        fisher = fisher_information(state, [data.all()])
    ris = torch.zeros(n, dtype=state.params.dtype)
    if cfg.use_ris and cfg.lambda_ris > 0 and prev is not None:
        persisting, _, _ = node_churn(prev.graph, curr.graph)
        targets = tg.subgraph_nodes or persisting
        probe = _ri_probe(prev, curr, targets, scaler, cfg)
        if probe is not None:
            ris = ri_fisher(state, probe, cfg.ri_chunks, cfg.bins)
    return FisherTable(fisher, ris, state.params)


@dataclass
class RunResult:
    records: list[MetricRecord]
    states: list[ModelState]
    logs: list[IntervalLog]
    ri_tables: list[RiScoreTable | None]
    fisher_tables: list[FisherTable | None]
    buffer: MemoryBuffer | None
    scaler: Scaler

    @property
    def losses(self) -> list[float]:
        return [x for log in self.logs for x in log.losses]


def run_continual(seq: DynamicGraphSequence, cfg: TrainConfig, model_tag: str = "infgnn",
                  state: ModelState | None = None) -> RunResult:
    """Train on interval t, test on t+1, for every consecutive pair."""
    if len(seq) < 2:
        raise ConfigError("continual training needs at least two intervals")
    streams = Streams.from_seed(cfg.seed)
    scaler = Scaler.fit(seq[0].features)
    state = state or ModelState.initial(cfg.model_spec(seq.n_features), cfg.seed)
    offsets = interval_offsets(seq)
    buffer, fisher = None, None
    result = RunResult([], [], [], [], [], None, scaler)
    for t in range(len(seq) - 1):
        prev = seq[t - 1] if t > 0 else None
        state, buffer, fisher, tg, log = train_interval(
            state, prev, seq[t], buffer, fisher, cfg, scaler, streams, offsets[t], t * cfg.epochs)
        result.records += evaluate_transition(state, seq[t], seq[t + 1], scaler, model_tag, cfg.seed,
                                              cfg.adjacency_mode, cfg.mape_floor)
        result.states.append(state)
        result.logs.append(log)
        result.ri_tables.append(tg.ri_table)
        result.fisher_tables.append(fisher)
    result.buffer = buffer
    return result


def run_plain(seq: DynamicGraphSequence, cfg: TrainConfig, model_tag: str = "plain") -> RunResult:
    """Reference trainer: windowed MSE on each full interval graph, warm-started, nothing else."""
    if len(seq) < 2:
        raise ConfigError("continual training needs at least two intervals")
    streams = Streams.from_seed(cfg.seed)
    scaler = Scaler.fit(seq[0].features)
    state = ModelState.initial(cfg.model_spec(seq.n_features), cfg.seed)
    offsets = interval_offsets(seq)
    result = RunResult([], [], [], [], [], None, scaler)
    for t in range(len(seq) - 1):
        iv = seq[t]
        pool = WindowPool(iv.graph, iv.features, scaler, cfg.input_steps, cfg.horizon,
                          train_anchors(iv.features.n_steps, cfg), offsets[t], cfg.adjacency_mode)
        log = IntervalLog(iv.index)
        for _ in range(cfg.epochs):
            for rows in batch_order(len(pool), cfg.batch_size, streams.data):
                batch = [pool.batch(rows)]
                log.window_ids.append(batch[0].timestamp_ids)
                loss, grads = loss_and_gradients(state, batch)
                state = optimizer_step(state, grads, cfg.lr)
                log.losses.append(loss)
        result.records += evaluate_transition(state, iv, seq[t + 1], scaler, model_tag, cfg.seed,
                                              cfg.adjacency_mode, cfg.mape_floor)
        result.states.append(state)
        result.logs.append(log)
        result.ri_tables.append(None)
        result.fisher_tables.append(None)
    return result
