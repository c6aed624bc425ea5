import numpy as np
import pytest

from infgnn.distrib import jsd_samples
from infgnn.graph import node_churn
from infgnn.synthetic import SynthConfig, SynthConfigError, generate_synthetic_drift


def test_deterministic():
    cfg = SynthConfig(n_intervals=3, initial_nodes=15, growth=4, steps_per_interval=300)
    a, ta = generate_synthetic_drift(cfg, 11)
    b, tb = generate_synthetic_drift(cfg, 11)
    assert ta == tb
    for x, y in zip(a, b):
        assert x.graph.nodes == y.graph.nodes
        assert np.array_equal(x.graph.adjacency, y.graph.adjacency)
        assert np.array_equal(x.features.values, y.features.values)


def test_default_shape_and_growth():
    seq, _ = generate_synthetic_drift(SynthConfig(), 0)
    assert len(seq) == 4
    assert [iv.graph.n_nodes for iv in seq] == [60, 70, 80, 90]
    for prev, curr in zip(seq, seq.intervals[1:]):
        _, added, removed = node_churn(prev.graph, curr.graph)
        assert len(added) == 10 and not removed
        for v in added:
            assert curr.graph.neighbors(v)
    for iv in seq:
        assert iv.features.values.shape == (iv.graph.n_nodes, 1, 2016)
        assert np.all(np.isfinite(iv.features.values))


def test_stable_count():
    _, truth = generate_synthetic_drift(SynthConfig(initial_nodes=50, growth=0, stable_fraction=0.3), 1)
    assert len(truth["stable_nodes"]) == 15


def test_zero_drift_marginals_agree():
    seq, _ = generate_synthetic_drift(SynthConfig(drift_strength=0.0, n_intervals=2), 4)
    a, b = seq[0].features, seq[1].features
    worst = max(jsd_samples(a.series(v), b.series(v), 64) for v in a.node_order)
    assert worst < 0.05


def test_multifeature():
    seq, _ = generate_synthetic_drift(SynthConfig(n_features=2, initial_nodes=6, growth=1,
                                                  steps_per_interval=100, n_intervals=2), 0)
    assert seq.n_features == 2


def test_config_errors():
    with pytest.raises(SynthConfigError, match="bogus"):
        SynthConfig.from_dict({"bogus": 1})
    with pytest.raises(SynthConfigError, match="removals"):
        SynthConfig(initial_nodes=5, growth=0, removals=5)
    with pytest.raises(SynthConfigError):
        SynthConfig(drift_strength="extreme")
    assert SynthConfig(drift_strength="high").drift_strength == 2.0


def test_removals_leave_overlap():
    seq, _ = generate_synthetic_drift(SynthConfig(initial_nodes=10, growth=2, removals=3,
                                                  steps_per_interval=100), 2)
    for prev, curr in zip(seq, seq.intervals[1:]):
        p, _, removed = node_churn(prev.graph, curr.graph)
        assert len(removed) == 3 and p
