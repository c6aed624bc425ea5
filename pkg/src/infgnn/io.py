"""Reading and writing the on-disk dataset layout.

Layout::

    <root>/manifest.json
    <root>/t<k>/edges.csv       src,dst,weight
    <root>/t<k>/features.csv    node,feature,step,value

``features.csv`` may be replaced by ``features.bin`` (raw float64,
row-major) plus a ``features.json`` sidecar declaring shape and order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from .graph import (DynamicGraphSequence, FeatureTensor, GraphValidationError, Interval,
                    IntervalGraph)

MANIFEST = "manifest.json"


class DatasetFormatError(ValueError):
    pass


def _read_edges(path: Path, nodes, interval: int, remap) -> IntervalGraph:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"src", "dst", "weight"} - set(df.columns)
    if missing:
        raise DatasetFormatError(f"{path}: missing column(s) {sorted(missing)}")
    nodes = sorted(nodes)
    pos = {v: i for i, v in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)))
    for src, dst, w in zip(df["src"].map(remap), df["dst"].map(remap), df["weight"].astype(float)):
        if src not in pos or dst not in pos:
            raise GraphValidationError(f"edge ({src}, {dst}) references a node outside the interval",
                                       interval)
        adj[pos[src], pos[dst]] = w
    if not np.array_equal(adj, adj.T):
        # a single row per undirected edge is accepted; conflicting duplicates are not
        upper, lower = np.triu(adj), np.tril(adj).T
        clash = (upper > 0) & (lower > 0) & (upper != lower)
        if np.any(clash):
            raise GraphValidationError("adjacency is not symmetric", interval)
        adj = np.maximum(adj, adj.T)
    return IntervalGraph(interval, tuple(nodes), adj)


def _read_features_csv(path: Path, nodes, n_features: int, n_steps: int, interval: int,
                       remap) -> np.ndarray:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"node", "feature", "step", "value"} - set(df.columns)
    if missing:
        raise DatasetFormatError(f"{path}: missing column(s) {sorted(missing)}")
    nodes = sorted(nodes)
    pos = {v: i for i, v in enumerate(nodes)}
    rows = df["node"].map(remap).map(pos)
    if rows.isna().any():
        raise GraphValidationError("features reference nodes outside the interval", interval)
    values = np.full((len(nodes), n_features, n_steps), np.nan)
    f, s = df["feature"].to_numpy(int), df["step"].to_numpy(int)
    if f.min(initial=0) < 0 or f.max(initial=0) >= n_features or s.min(initial=0) < 0 \
            or s.max(initial=0) >= n_steps:
        raise GraphValidationError(
            f"feature/step index outside declared shape ({len(nodes)}, {n_features}, {n_steps})",
            interval)
    values[rows.to_numpy(int), f, s] = df["value"].to_numpy(float)
    return values


def _read_features_bin(path: Path, sidecar: Path, nodes, interval: int, remap) -> np.ndarray:
    meta = json.loads(sidecar.read_text())
    shape = tuple(meta["shape"])
    if meta.get("order", "C") != "C":
        raise DatasetFormatError(f"{sidecar}: only row-major order is supported")
    dtype = np.dtype(meta.get("dtype", "<f8"))
    raw = np.fromfile(path, dtype=dtype)
    if raw.size != int(np.prod(shape)):
        raise GraphValidationError(
            f"{path.name} holds {raw.size} values, sidecar declares shape {shape}", interval)
    values = raw.reshape(shape).astype(np.float64)
    order = [remap(v) for v in meta.get("node_order", sorted(nodes))]
    if sorted(order) != sorted(nodes):
        raise GraphValidationError("binary feature node order does not match manifest nodes", interval)
    perm = np.argsort(order, kind="stable")
    return values[perm]


def load_dataset(root) -> DynamicGraphSequence:
    """Load and validate a dataset directory.

    When the manifest carries ``node_ids`` (raw ids as written in the CSV
    files), every raw id is remapped to its position in that list.
    """
    root = Path(root)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise DatasetFormatError(f"missing {MANIFEST} in {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{mpath}: {exc}") from exc
    for key in ("T", "D", "M", "intervals"):
        if key not in manifest:
            raise DatasetFormatError(f"{mpath}: missing field {key!r}")
    raw_ids = manifest.get("node_ids")
    if raw_ids is not None:
        lookup = {int(r): i for i, r in enumerate(raw_ids)}

        def remap(v):
            return lookup[int(v)]
    else:
        def remap(v):
            return int(v)

    intervals = []
    for entry in manifest["intervals"]:
        t = int(entry["index"])
        sub = root / entry.get("dir", f"t{t}")
        nodes = sorted(remap(v) for v in entry["nodes"])
        n_steps = int(entry.get("M", manifest["M"]))
        graph = _read_edges(sub / "edges.csv", nodes, t, remap)
        if (sub / "features.csv").is_file():
            values = _read_features_csv(sub / "features.csv", nodes, int(manifest["D"]), n_steps, t, remap)
        elif (sub / "features.bin").is_file():
            values = _read_features_bin(sub / "features.bin", sub / "features.json", nodes, t, remap)
        else:
            raise DatasetFormatError(f"{sub}: no features.csv or features.bin")
        if values.shape != (len(nodes), int(manifest["D"]), n_steps):
            raise GraphValidationError(f"feature shape {values.shape} does not match manifest", t)
        if not np.all(np.isfinite(values)):
            raise GraphValidationError("features contain NaN or missing entries", t)
        intervals.append(Interval(graph, FeatureTensor(values, tuple(nodes))))
    if len(intervals) != int(manifest["T"]):
        raise DatasetFormatError(f"manifest declares T={manifest['T']} but lists {len(intervals)} intervals")
    return DynamicGraphSequence(intervals, metadata={"manifest": manifest})


def _edges_frame(g: IntervalGraph) -> pd.DataFrame:
    rows, cols = np.nonzero(np.triu(g.adjacency, k=1))
    return pd.DataFrame({
        "src": [g.nodes[i] for i in rows],
        "dst": [g.nodes[j] for j in cols],
        "weight": g.adjacency[rows, cols],
    })


def _features_frame(x: FeatureTensor) -> pd.DataFrame:
    n, d, m = x.values.shape
    node, feat, step = np.meshgrid(np.array(x.node_order), np.arange(d), np.arange(m), indexing="ij")
    return pd.DataFrame({"node": node.ravel(), "feature": feat.ravel(), "step": step.ravel(),
                         "value": x.values.ravel()})


def write_dataset(seq: DynamicGraphSequence, root, extra: dict | None = None) -> Path:
    """Write ``seq`` in the canonical CSV layout; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    all_nodes = sorted(set().union(*(iv.graph.node_set for iv in seq)))
    manifest = {
        "T": len(seq),
        "D": seq.n_features,
        "M": seq[0].features.n_steps,
        "n_global_nodes": len(all_nodes),
        "intervals": [],
    }
    for iv in seq:
        sub = root / f"t{iv.index}"
        sub.mkdir(exist_ok=True)
        _edges_frame(iv.graph).to_csv(sub / "edges.csv", index=False)
        _features_frame(iv.features).to_csv(sub / "features.csv", index=False)
        entry = {"index": iv.index, "dir": sub.name, "nodes": list(iv.graph.nodes)}
        if iv.features.n_steps != manifest["M"]:
            entry["M"] = iv.features.n_steps
        manifest["intervals"].append(entry)
    if extra:
        manifest.update(extra)
    path = root / MANIFEST
    path.write_text(json.dumps(manifest, indent=1))
    return path


def write_features_binary(x: FeatureTensor, directory) -> None:
    directory = Path(directory)
    np.ascontiguousarray(x.values, dtype="<f8").tofile(directory / "features.bin")
    (directory / "features.json").write_text(json.dumps({
        "shape": list(x.values.shape), "dtype": "<f8", "order": "C",
        "node_order": list(x.node_order)}))


def load_pems_export(root, periods=None) -> DynamicGraphSequence:
    """Build a sequence from per-period exports ``<root>/<period>/{edges,features}.csv``.

    ``periods`` defaults to the sorted subdirectory names (e.g. years).
    Node ids in the files are used as global ids; the node set of a period
    is every node with recorded features.
    """
    root = Path(root)
    if periods is None:
        periods = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not periods:
        raise DatasetFormatError(f"{root}: no period subdirectories")
    intervals = []
    for t, period in enumerate(periods, start=1):
        sub = root / str(period)
        feats = pd.read_csv(sub / "features.csv")
        nodes = sorted(int(v) for v in feats["node"].unique())
        n_features = int(feats["feature"].max()) + 1
        n_steps = int(feats["step"].max()) + 1
        graph = _read_edges(sub / "edges.csv", nodes, t, int)
        values = _read_features_csv(sub / "features.csv", nodes, n_features, n_steps, t, int)
        if not np.all(np.isfinite(values)):
            raise GraphValidationError("features contain NaN or missing entries", t)
        intervals.append(Interval(graph, FeatureTensor(values, tuple(nodes))))
    return DynamicGraphSequence(intervals, metadata={"periods": [str(p) for p in periods]})
