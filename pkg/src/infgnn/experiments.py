"""Baselines, ablation arms and parameter sweeps."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .evaluation import MetricRecord, evaluate_transition
from .graph import (DynamicGraphSequence, FeatureTensor, Interval, crop_features, hop_distances,
                    induced_subgraph, node_churn)
from .surrogate import ModelState, loss_and_gradients, optimizer_step
from .trainer import (ConfigError, IntervalLog, RunResult, Streams, TrainConfig, apply_ablation,
                      interval_offsets, run_continual, run_plain, train_anchors)
from .windows import Scaler, WindowPool, batch_order

BASELINES = ("retrain", "expand", "knn_kriging")
ABLATION_ARMS = ("wo_sg", "wo_ifg", "wo_mb", "wo_ifs", "wo_ris")
SWEEP_DEFAULTS = {
    "buffer_capacity": (800, 1000, 1200),
    "ri_weight": (0.1, 0.3, 0.5, 0.7, 0.9),
}


def knn_simulate(interval: Interval, unknown, k: int = 3) -> FeatureTensor:
    """Replace each unknown node's series by the mean of its ``k`` nearest known nodes.

    Distance is unweighted hop count in the interval graph, ties broken by
    node id. A node that reaches no known node gets the mean of all known nodes.
    """
    g, x = interval.graph, interval.features
    unknown = set(int(v) for v in unknown)
    known = [v for v in g.nodes if v not in unknown]
    if not known:
        raise ValueError("kriging needs at least one known node")
    values = x.values.copy()
    for v in sorted(unknown):
        dist = hop_distances(g, v)
        ranked = sorted((d, u) for u, d in dist.items() if u not in unknown and u != v)
        near = [u for _, u in ranked[:k]] or known
        values[g.index_of(v)] = x.rows(near).mean(axis=0)
    return FeatureTensor(values, x.node_order)


def _warm_start_run(seq: DynamicGraphSequence, cfg: TrainConfig, tag: str, graph_fn) -> RunResult:
    """Plain warm-started training where ``graph_fn(prev, curr)`` picks each interval's data.

    ``graph_fn`` returns ``(graph, features)`` or ``None`` to skip training.
    """
    if len(seq) < 2:
        raise ConfigError("continual training needs at least two intervals")
    streams = Streams.from_seed(cfg.seed)
    scaler = Scaler.fit(seq[0].features)
    state = ModelState.initial(cfg.model_spec(seq.n_features), cfg.seed)
    offsets = interval_offsets(seq)
    result = RunResult([], [], [], [], [], None, scaler)
    for t in range(len(seq) - 1):
        prev, curr = (seq[t - 1] if t else None), seq[t]
        log = IntervalLog(curr.index)
        data = graph_fn(prev, curr)
        if data is not None:
            graph, feats = data
            pool = WindowPool(graph, feats, scaler, cfg.input_steps, cfg.horizon,
                              train_anchors(curr.features.n_steps, cfg), offsets[t], cfg.adjacency_mode)
            for _ in range(cfg.epochs):
                for rows in batch_order(len(pool), cfg.batch_size, streams.data):
                    batch = [pool.batch(rows)]
                    log.window_ids.append(batch[0].timestamp_ids)
                    loss, grads = loss_and_gradients(state, batch)
                    state = optimizer_step(state, grads, cfg.lr)
                    log.losses.append(loss)
        result.records += evaluate_transition(state, curr, seq[t + 1], scaler, tag, cfg.seed,
                                              cfg.adjacency_mode, cfg.mape_floor)
        result.states.append(state)
        result.logs.append(log)
        result.ri_tables.append(None)
        result.fisher_tables.append(None)
    return result


def run_baseline(tag: str, seq: DynamicGraphSequence, cfg: TrainConfig, knn_k: int = 3) -> RunResult:
    """Warm-started surrogate baselines.

    ``retrain`` trains on every node of each interval; ``expand`` trains only
    on the nodes that appeared in the interval (all nodes in the first one);
    ``knn_kriging`` trains on the full graph after replacing new nodes'
    series with the mean of their nearest known neighbours.
    """
    if tag == "retrain":
        return run_plain(seq, cfg, model_tag="retrain")

    if tag == "expand":
        def graph_fn(prev, curr):
            if prev is None:
                return curr.graph, curr.features
            _, added, _ = node_churn(prev.graph, curr.graph)
            if not added:
                return None
            sub = induced_subgraph(curr.graph, added)
            return sub, crop_features(curr.features, sub.nodes)
    elif tag == "knn_kriging":
        def graph_fn(prev, curr):
            if prev is None:
                return curr.graph, curr.features
            _, added, _ = node_churn(prev.graph, curr.graph)
            return curr.graph, knn_simulate(curr, added, knn_k)
    else:
        raise ConfigError(f"unknown baseline {tag!r}; choose from {list(BASELINES)}")
    return _warm_start_run(seq, cfg, tag, graph_fn)


def sweep_configs(cfg: TrainConfig, param: str, values) -> list[tuple[str, TrainConfig]]:
    """One config per value. ``ri_weight`` sets ``lambda_ris = v`` and ``lambda_ewc = 1 - v``."""
    out = []
    for v in values:
        if param == "ri_weight":
            arm = replace(cfg, lambda_ris=float(v), lambda_ewc=1.0 - float(v))
        elif param in cfg.to_dict():
            kind = type(getattr(cfg, param))
            arm = replace(cfg, **{param: kind(v)})
        else:
            raise ConfigError(f"unknown sweep parameter {param!r}")
        out.append((f"{param}={v}", arm))
    return out


def run_ablations(seq: DynamicGraphSequence, cfg: TrainConfig, which=("full",) + ABLATION_ARMS,
                  sweeps: dict | None = None) -> dict[str, RunResult]:
    """Run each ablation arm and each sweep value under the same seed."""
    out = {}
    for tag in which:
        out[tag] = run_continual(seq, apply_ablation(cfg, tag), model_tag=tag)
    for param, values in (sweeps or {}).items():
        for tag, arm in sweep_configs(cfg, param, values):
            out[tag] = run_continual(seq, arm, model_tag=tag)
    return out


def collect_records(results: dict[str, RunResult]) -> list[MetricRecord]:
    return [r for res in results.values() for r in res.records]


def new_node_mae(records, horizons=None) -> float:
    """Mean MAE over the ``new`` group records (optionally limited to some horizons)."""
    vals = [r.mae for r in records if r.group == "new" and r.mae is not None
            and (horizons is None or r.horizon in horizons)]
    return float(np.mean(vals)) if vals else float("nan")
