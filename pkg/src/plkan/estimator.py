"""Scikit-learn estimator front end.

Wraps model construction and the sequential/parallel trainers behind
the usual ``fit``/``predict`` surface so the network slots into
pipelines, grid search and cross-validation like any other regressor.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .parallel import ParallelPlan, train_parallel
from .pretrain import pretrain
from .training import (Architecture, TrainConfig, init_model, train,
                       DEFAULT_GRID_HEADROOM, DEFAULT_INNER_SCALE)


class KanRegressor(RegressorMixin, BaseEstimator):
    """Piecewise-linear KAN regressor trained with per-record updates.

    Parameters
    ----------
    hidden_layer_sizes : widths of the hidden layers.
    node_counts : grid nodes per layer; one entry per hidden layer plus
        one for the output layer.
    mu : damping factor of the per-record update, in (0, 1].
    epochs : passes over the training data (sequential mode), or rounds
        (parallel mode, when ``threads > 1``).
    threads : when > 1, each epoch becomes a train-and-merge round over
        that many disjoint batches trained concurrently.
    batch_size : per-worker records per round; defaults to an equal
        split of the training set.
    pretrain_groups : when > 0, warm-start two-layer scalar models by
        training this many addend groups independently first.
    shuffle : reshuffle the record order each epoch.
    inner_scale, grid_headroom : initialization scales, see
        ``plkan.training.init_model``.
    random_state : seed for initialization, shuffling and batching.
    """

    def __init__(self, hidden_layer_sizes=(70,), node_counts=(3, 25),
                 mu=0.5, epochs=10, threads=1, batch_size=None,
                 pretrain_groups=0, shuffle=True,
                 inner_scale=DEFAULT_INNER_SCALE,
                 grid_headroom=DEFAULT_GRID_HEADROOM,
                 random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.node_counts = node_counts
        self.mu = mu
        self.epochs = epochs
        self.threads = threads
        self.batch_size = batch_size
        self.pretrain_groups = pretrain_groups
        self.shuffle = shuffle
        self.inner_scale = inner_scale
        self.grid_headroom = grid_headroom
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, multi_output=True,
                         dtype=np.float64)
        self._y_was_1d = y.ndim == 1
        Y = y.reshape(-1, 1) if self._y_was_1d else y
        data = Dataset(X.shape[1], Y.shape[1], np.hstack([X, Y]))
        seed = self._seed()
        arch = Architecture(X.shape[1],
                            tuple(self.hidden_layer_sizes) + (Y.shape[1],),
                            tuple(self.node_counts))
        model = init_model(arch, data.input_range(), data.target_range(),
                           seed, inner_scale=self.inner_scale,
                           grid_headroom=self.grid_headroom)
        cfg = TrainConfig(mu=self.mu, epochs=max(1, self.epochs), seed=seed,
                          shuffle_each_epoch=self.shuffle)
        if self.pretrain_groups:
            model = pretrain(model, data, self.pretrain_groups,
                             TrainConfig(mu=self.mu, epochs=1, seed=seed,
                                         shuffle_each_epoch=False))
        if self.epochs > 0:
            if self.threads > 1:
                batch = self.batch_size or data.record_count // self.threads
                plan = ParallelPlan(threads=self.threads, rounds=self.epochs,
                                    batch_size=batch, seed=seed, mu=self.mu)
                model, _ = train_parallel(model, data, None, plan)
            else:
                train(model, data, cfg)
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        pred = self.model_.predict(X)
        return pred[:, 0] if self._y_was_1d else pred

    def _seed(self) -> int:
        if self.random_state is None:
            return int(np.random.SeedSequence().entropy % (2 ** 63))
        return int(self.random_state)
