"""Seeded synthetic benchmark: a growing sensor network under controllable drift.

Every node records a daily seasonal profile plus autoregressive noise. A
fixed fraction of nodes keeps one generating process for the whole
sequence ("stable"); the rest get a fresh mean shift and variance scaling
in every interval, alternating in sign so consecutive intervals always
differ.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .graph import DynamicGraphSequence, FeatureTensor, Interval, IntervalGraph

DRIFT_LEVELS = {"none": 0.0, "low": 0.5, "medium": 1.0, "high": 2.0}


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_intervals: int = 4
    initial_nodes: int = 60
    growth: int = 10
    removals: int = 0
    steps_per_interval: int = 2016
    steps_per_day: int = 288
    n_features: int = 1
    drift_strength: float = DRIFT_LEVELS["high"]
    stable_fraction: float = 0.1
    edges_per_new_node: int = 2
    ar_coef: float = 0.8
    noise_scale: float = 0.15
    shared_noise: float = 0.4

    def __post_init__(self):
        if isinstance(self.drift_strength, str):
            if self.drift_strength not in DRIFT_LEVELS:
                raise SynthConfigError(f"unknown drift level {self.drift_strength!r}")
            object.__setattr__(self, "drift_strength", DRIFT_LEVELS[self.drift_strength])
        if self.n_intervals < 1 or self.initial_nodes < 2 or self.steps_per_interval < 2:
            raise SynthConfigError("n_intervals, initial_nodes and steps_per_interval are too small")
        if self.growth < 0 or self.removals < 0 or self.n_features < 1:
            raise SynthConfigError("growth, removals and n_features must be nonnegative/positive")
        if not 0.0 <= self.stable_fraction <= 1.0:
            raise SynthConfigError("stable_fraction must lie in [0, 1]")
        if self.drift_strength < 0:
            raise SynthConfigError("drift_strength must be nonnegative")
        if self.edges_per_new_node < 1:
            raise SynthConfigError("edges_per_new_node must be positive")
        if not 0 <= self.ar_coef < 1:
            raise SynthConfigError("ar_coef must lie in [0, 1)")
        # removals must leave persisting nodes behind
        n = self.initial_nodes
        for _ in range(1, self.n_intervals):
            if self.removals >= n:
                raise SynthConfigError("removals empty the persisting-node intersection")
            n = n - self.removals + self.growth

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SynthConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def _n_stable(fraction: float, n: int) -> int:
    return int(np.floor(fraction * n + 0.5))


def _ar_noise(rng: np.random.Generator, n_series: int, n_steps: int, phi: float) -> np.ndarray:
    eps = rng.standard_normal((n_series, n_steps))
    out = np.empty_like(eps)
    out[:, 0] = eps[:, 0]
    innov = np.sqrt(1.0 - phi * phi)
    for s in range(1, n_steps):
        out[:, s] = phi * out[:, s - 1] + innov * eps[:, s]
    return out


def generate_synthetic_drift(config: SynthConfig | None = None, seed: int = 0
                             ) -> tuple[DynamicGraphSequence, dict]:
    """Generate a drifting, growing network and its ground-truth log.

    Returns the sequence and a dict with the stable-node flags and the
    per-interval drift parameters of every node.
    """
    cfg = config or SynthConfig()
    rng = np.random.default_rng(seed)

    node_ids = list(range(cfg.initial_nodes))
    level = {v: float(np.exp(rng.uniform(np.log(20.0), np.log(2000.0)))) for v in node_ids}
    phase = {v: rng.normal(0.0, 0.4) for v in node_ids}
    order = rng.permutation(cfg.initial_nodes)
    stable = {int(v) for v in order[:_n_stable(cfg.stable_fraction, cfg.initial_nodes)]}
    sign = {v: rng.choice([-1.0, 1.0]) for v in node_ids}

    edges: set[tuple[int, int]] = set()
    n0 = cfg.initial_nodes
    for i in range(n0):
        edges.add(tuple(sorted((i, (i + 1) % n0))))
    for _ in range(n0 // 2):
        a, b = rng.choice(n0, size=2, replace=False)
        edges.add(tuple(sorted((int(a), int(b)))))

    alive = set(node_ids)
    next_id = n0
    intervals = []
    drift_log = []
    s = np.arange(cfg.steps_per_interval)
    day = 2.0 * np.pi * s / cfg.steps_per_day

    for t in range(1, cfg.n_intervals + 1):
        if t > 1:
            if cfg.removals:
                gone = rng.choice(sorted(alive), size=cfg.removals, replace=False)
                alive -= {int(v) for v in gone}
                edges = {e for e in edges if e[0] in alive and e[1] in alive}
            new = list(range(next_id, next_id + cfg.growth))
            next_id += cfg.growth
            new_order = rng.permutation(len(new))
            new_stable = {new[i] for i in new_order[:_n_stable(cfg.stable_fraction, len(new))]}
            for v in new:
                pool = sorted(alive)
                targets = rng.choice(pool, size=min(cfg.edges_per_new_node, len(pool)), replace=False)
                for u in targets:
                    edges.add(tuple(sorted((int(u), v))))
                level[v] = float(np.exp(rng.uniform(np.log(20.0), np.log(2000.0))))
                phase[v] = float(np.mean([phase[int(u)] for u in targets]) + rng.normal(0, 0.1))
                sign[v] = rng.choice([-1.0, 1.0])
                alive.add(v)
            stable |= new_stable

        nodes = sorted(alive)
        n = len(nodes)
        shared = _ar_noise(rng, cfg.n_features, cfg.steps_per_interval, cfg.ar_coef)
        local = _ar_noise(rng, n * cfg.n_features, cfg.steps_per_interval, cfg.ar_coef)
        local = local.reshape(n, cfg.n_features, cfg.steps_per_interval)
        shift_mag = rng.uniform(0.1, 0.2, size=n)
        scale_mag = rng.uniform(0.15, 0.3, size=n)
        values = np.empty((n, cfg.n_features, cfg.steps_per_interval))
        interval_drift = {}
        for i, v in enumerate(nodes):
            base = level[v]
            amp = 0.3 * base
            if v in stable or cfg.drift_strength == 0:
                shift, scale = 0.0, 1.0
            else:
                alt = sign[v] * (-1.0) ** t
                shift = alt * cfg.drift_strength * shift_mag[i]
                scale = float(np.exp(alt * cfg.drift_strength * scale_mag[i]))
            interval_drift[v] = (shift, scale)
            profile = 0.5 * (1.0 - np.cos(day + phase[v])) + 0.25 * np.sin(2.0 * day + phase[v])
            for d in range(cfg.n_features):
                fscale = 1.0 + 0.25 * d
                noise = cfg.shared_noise * shared[d] + (1.0 - cfg.shared_noise) * local[i, d]
                seasonal = base * (1.0 + shift) + amp * (profile - 0.5)
                values[i, d] = fscale * (seasonal + scale * cfg.noise_scale * base * noise
                                         + (scale - 1.0) * amp * (profile - 0.5))
        drift_log.append({str(v): list(interval_drift[v]) for v in nodes})
        graph = IntervalGraph.from_edges(t, nodes, [(a, b, 1.0) for a, b in sorted(edges)])
        intervals.append(Interval(graph, FeatureTensor(values, tuple(nodes))))

    truth = {
        "seed": int(seed),
        "config": cfg.to_dict(),
        "stable_nodes": sorted(int(v) for v in stable),
        "drift": drift_log,
    }
    return DynamicGraphSequence(intervals, metadata={"ground_truth": truth}), truth
