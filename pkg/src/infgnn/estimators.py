"""scikit-learn style wrappers around the surrogate and the continual trainer."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_adjacency, check_pair, check_windows
from .evaluation import heldout_pool, predict
from .graph import DynamicGraphSequence, Interval
from .surrogate import (ModelSpec, ModelState, WindowBatch, forward, loss_and_gradients,
                        normalize_adjacency, optimizer_step)
from .trainer import TrainConfig, run_continual
from .windows import batch_order


class SurrogateForecaster(RegressorMixin, BaseEstimator):
    """Fit the surrogate on pre-cut windows of one graph.

    ``X`` is ``(samples, nodes, features, input_steps)`` and ``y`` is
    ``(samples, nodes, features, horizon)``; the adjacency is passed to ``fit``.
    """

    def __init__(self, hidden=64, kernel_width=3, epochs=50, batch_size=128, lr=0.01, seed=0,
                 adjacency_mode="sym"):
        self.hidden = hidden
        self.kernel_width = kernel_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.adjacency_mode = adjacency_mode

    def fit(self, X, y, adjacency=None):
        X, y = check_pair(X, y)
        n_nodes = X.shape[1]
        adjacency = np.zeros((n_nodes, n_nodes)) if adjacency is None else adjacency
        self.adjacency_ = check_adjacency(adjacency, n_nodes)
        self.spec_ = ModelSpec(X.shape[2], X.shape[3], y.shape[3], self.hidden, self.kernel_width)
        op = normalize_adjacency(self.adjacency_, self.adjacency_mode)
        data = WindowBatch(op, X, y)
        rng = np.random.default_rng(self.seed)
        state = ModelState.initial(self.spec_, self.seed)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            for rows in batch_order(len(data), self.batch_size, rng):
                loss, grads = loss_and_gradients(state, [data.subset(rows)])
                state = optimizer_step(state, grads, self.lr)
                self.loss_curve_.append(loss)
        self.state_ = state
        self.n_features_in_ = X.shape[2]
        return self

    def predict(self, X, adjacency=None):
        check_is_fitted(self, "state_")
        X = check_windows(X, "X", self.spec_.n_features, self.spec_.input_steps)
        adjacency = self.adjacency_ if adjacency is None else check_adjacency(adjacency, X.shape[1])
        op = normalize_adjacency(adjacency, self.adjacency_mode)
        with torch.no_grad():
            out = forward(self.spec_, self.state_.params, op, torch.as_tensor(X))
        return out.numpy()

    def score(self, X, y, sample_weight=None, adjacency=None):
        """Negative mean squared error (higher is better)."""
        X, y = check_pair(X, y)
        pred = self.predict(X, adjacency)
        return -float(np.mean((pred - y) ** 2))


class InfGNNForecaster(BaseEstimator):
    """Continual forecaster over a ``DynamicGraphSequence``.

    Constructor parameters mirror ``TrainConfig`` one to one. ``fit`` runs the
    train-on-t / test-on-t+1 loop and keeps the final model; ``predict``
    forecasts the held-out windows of an interval in original units.
    """

    def __init__(self, input_steps=12, horizon=12, epochs=50, pseudo_epochs=45, batch_size=128,
                 memory_fraction=0.25, lr=0.01, buffer_capacity=1000, subgraph_fraction=0.1, k_hop=1,
                 lambda_ewc=0.5, lambda_ris=0.5, sim_set_size=100, seed=0, hidden=64, kernel_width=3,
                 damping=0.001, hessian_mode="diagonal", exact_cap=2000, buffer_ranking="signed",
                 bins=64, ri_chunks=8, fisher_on_full=False, adjacency_mode="sym", mape_floor=1.0,
                 use_subgraph=True, informative_subgraph=True, use_buffer=True,
                 informative_buffer=True, use_ris=True, use_ewc=True):
        self.input_steps = input_steps
        self.horizon = horizon
        self.epochs = epochs
        self.pseudo_epochs = pseudo_epochs
        self.batch_size = batch_size
        self.memory_fraction = memory_fraction
        self.lr = lr
        self.buffer_capacity = buffer_capacity
        self.subgraph_fraction = subgraph_fraction
        self.k_hop = k_hop
        self.lambda_ewc = lambda_ewc
        self.lambda_ris = lambda_ris
        self.sim_set_size = sim_set_size
        self.seed = seed
        self.hidden = hidden
        self.kernel_width = kernel_width
        self.damping = damping
        self.hessian_mode = hessian_mode
        self.exact_cap = exact_cap
        self.buffer_ranking = buffer_ranking
        self.bins = bins
        self.ri_chunks = ri_chunks
        self.fisher_on_full = fisher_on_full
        self.adjacency_mode = adjacency_mode
        self.mape_floor = mape_floor
        self.use_subgraph = use_subgraph
        self.informative_subgraph = informative_subgraph
        self.use_buffer = use_buffer
        self.informative_buffer = informative_buffer
        self.use_ris = use_ris
        self.use_ewc = use_ewc

    def to_config(self) -> TrainConfig:
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    def fit(self, seq: DynamicGraphSequence, y=None, model_tag: str = "infgnn"):
        if not isinstance(seq, DynamicGraphSequence):
            raise TypeError(f"expected a DynamicGraphSequence, got {type(seq).__name__}")
        self.config_ = self.to_config()
        self.result_ = run_continual(seq, self.config_, model_tag)
        self.state_ = self.result_.states[-1]
        self.scaler_ = self.result_.scaler
        self.records_ = self.result_.records
        return self

    def predict(self, interval: Interval) -> np.ndarray:
        check_is_fitted(self, "state_")
        pool = heldout_pool(interval, self.scaler_, self.input_steps, self.horizon, self.adjacency_mode)
        return predict(self.state_, pool, self.scaler_)
