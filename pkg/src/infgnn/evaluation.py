"""Forecast metrics, node-group/horizon breakdowns and the metrics.csv format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .graph import Interval, node_churn
from .surrogate import ModelState, forward
from .windows import Scaler, WindowPool, split_anchors, window_anchors

HORIZONS = (3, 6, 12)
GROUPS = ("existing", "new", "all")
MAPE_FLOOR = 1.0
CSV_HEADER = ["interval", "group", "horizon", "mae", "rmse", "mape", "model_tag", "seed"]


def _mean(x: np.ndarray) -> float:
    # exactly rounded, so the result does not depend on element order
    return math.fsum(x.ravel().tolist()) / x.size


def compute_metrics(pred, truth, mask=None, mape_floor: float = MAPE_FLOOR):
    """Return ``(mae, rmse, mape)``; a metric with no valid entries is ``None``.

    MAPE is in percent and skips entries with ``|truth| < mape_floor``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    mask = np.ones(pred.shape, bool) if mask is None else np.asarray(mask, bool)
    if mask.shape != pred.shape:
        raise ValueError("mask shape does not match predictions")
    err = (pred - truth)[mask]
    if err.size == 0:
        return None, None, None
    mae = _mean(np.abs(err))
    # guard against a last-ulp inversion when all errors share one magnitude
    rmse = max(math.sqrt(_mean(err * err)), mae)
    t = truth[mask]
    ok = np.abs(t) >= mape_floor
    mape = 100.0 * _mean(np.abs(err[ok]) / np.abs(t[ok])) if ok.any() else None
    return mae, rmse, mape


@dataclass(frozen=True)
class MetricRecord:
    interval: int
    group: str
    horizon: int
    mae: float | None
    rmse: float | None
    mape: float | None
    model_tag: str
    seed: int

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown node group {self.group!r}")
        if self.mae is not None and self.rmse is not None and self.mae > self.rmse:
            raise ValueError(f"MAE {self.mae} exceeds RMSE {self.rmse}")
        if self.mape is not None and self.mape < 0:
            raise ValueError("MAPE must be nonnegative")


def group_breakdown(pred, truth, nodes: Sequence[int], new_nodes: Iterable[int], interval: int,
                    model_tag: str = "model", seed: int = 0, horizons=HORIZONS,
                    mape_floor: float = MAPE_FLOOR) -> list[MetricRecord]:
    """Records per node group and horizon; ``pred``/``truth`` are ``(S, N, D, K)``.

    Horizon ``h`` scores the first ``h`` predicted steps. Empty groups are skipped.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    new = set(int(v) for v in new_nodes)
    is_new = np.array([v in new for v in nodes], dtype=bool)
    members = {"existing": ~is_new, "new": is_new, "all": np.ones(len(nodes), bool)}
    out = []
    for group in GROUPS:
        sel = members[group]
        if not sel.any():
            continue
        for h in horizons:
            if h > pred.shape[-1]:
                raise ValueError(f"horizon {h} exceeds the predicted {pred.shape[-1]} steps")
            mae, rmse, mape = compute_metrics(pred[:, sel, :, :h], truth[:, sel, :, :h],
                                              mape_floor=mape_floor)
            out.append(MetricRecord(interval, group, h, mae, rmse, mape, model_tag, seed))
    return out


def predict(state: ModelState, pool: WindowPool, scaler: Scaler, chunk: int = 64) -> np.ndarray:
    """Forecasts for every window of ``pool`` in original units, ``(S, N, D, K)``."""
    outs = []
    with torch.no_grad():
        for start in range(0, len(pool), chunk):
            x = pool.inputs[start:start + chunk]
            outs.append(forward(state.spec, state.params, pool.adjacency, x))
    pred = torch.cat(outs) if outs else torch.zeros((0,) + tuple(pool.targets.shape[1:]))
    return scaler.inverse(pred.numpy())


def heldout_pool(interval: Interval, scaler: Scaler, input_steps: int, horizon: int,
                 adjacency_mode: str = "sym") -> WindowPool:
    """Held-out windows (final chronological split) of an interval on its full graph."""
    anchors = window_anchors(interval.features.n_steps, input_steps, horizon)
    _, _, test = split_anchors(anchors)
    return WindowPool(interval.graph, interval.features, scaler, input_steps, horizon, test,
                      adjacency_mode=adjacency_mode)


def evaluate_transition(state: ModelState, trained_on: Interval, test: Interval, scaler: Scaler,
                        model_tag: str = "model", seed: int = 0, adjacency_mode: str = "sym",
                        mape_floor: float = MAPE_FLOOR) -> list[MetricRecord]:
    """Score a model trained on one interval on the next one, without further training.

    Reports the standard horizons the model predicts, or just its full horizon
    when it is shorter than all of them.
    """
    spec = state.spec
    horizons = tuple(h for h in HORIZONS if h <= spec.horizon) or (spec.horizon,)
    pool = heldout_pool(test, scaler, spec.input_steps, spec.horizon, adjacency_mode)
    pred = predict(state, pool, scaler)
    truth = scaler.inverse(pool.targets.numpy())
    _, added, _ = node_churn(trained_on.graph, test.graph)
    return group_breakdown(pred, truth, pool.nodes, added, test.index, model_tag, seed,
                           horizons, mape_floor)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_metrics_csv(records: Iterable[MetricRecord], path, append: bool = True) -> Path:
    path = Path(path)
    fresh = not (append and path.is_file() and path.stat().st_size > 0)
    with open(path, "w" if fresh else "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.interval, r.group, r.horizon, _fmt(r.mae), _fmt(r.rmse), _fmt(r.mape),
                        r.model_tag, r.seed])
    return path


def read_metrics_csv(path) -> list[MetricRecord]:
    def num(s):
        return None if s == "" else float(s)

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricRecord(int(r["interval"]), r["group"], int(r["horizon"]), num(r["mae"]),
                         num(r["rmse"]), num(r["mape"]), r["model_tag"], int(r["seed"]))
            for r in rows]


def average_over_intervals(records: Iterable[MetricRecord]) -> dict:
    """Mean of each metric over intervals (and seeds), keyed by ``(model_tag, group, horizon)``.

    Absent values are skipped; a metric absent everywhere stays ``None``.
    """
    acc: dict = {}
    for r in records:
        slot = acc.setdefault((r.model_tag, r.group, r.horizon), {"mae": [], "rmse": [], "mape": []})
        for name in slot:
            value = getattr(r, name)
            if value is not None:
                slot[name].append(value)
    return {key: {name: (float(np.mean(v)) if v else None) for name, v in slot.items()}
            for key, slot in acc.items()}


def summary_table(records: Iterable[MetricRecord], horizons=HORIZONS) -> str:
    """Aligned text table: one row per (model, group), MAE/RMSE/MAPE per horizon."""
    avg = average_over_intervals(records)
    tags = sorted({k[0] for k in avg})
    header = ["model", "group"] + [f"{m}@{h}" for h in horizons for m in ("MAE", "RMSE", "MAPE%")]
    rows = [header]
    for tag in tags:
        for group in GROUPS:
            if not any((tag, group, h) in avg for h in horizons):
                continue
            row = [tag, group]
            for h in horizons:
                cell = avg.get((tag, group, h), {})
                row += ["-" if cell.get(m) is None else f"{cell[m]:.2f}" for m in ("mae", "rmse", "mape")]
            rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    return "\n".join(lines)

