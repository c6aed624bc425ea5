import numpy as np
import pytest

from infgnn.synthetic import SynthConfig, generate_synthetic_drift
from infgnn.trainer import TrainConfig

TINY_SYNTH = SynthConfig(n_intervals=3, initial_nodes=12, growth=3, steps_per_interval=240,
                         steps_per_day=48)


@pytest.fixture(scope="session")
def tiny_data():
    return generate_synthetic_drift(TINY_SYNTH, seed=3)


@pytest.fixture(scope="session")
def tiny_seq(tiny_data):
    return tiny_data[0]


@pytest.fixture
def tiny_cfg():
    return TrainConfig(epochs=3, pseudo_epochs=1, hidden=4, batch_size=32, buffer_capacity=24,
                       sim_set_size=10, ri_chunks=2, subgraph_fraction=0.3, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
