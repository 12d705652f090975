"""scikit-learn style wrapper for transductive node classification."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .batching import SplitPlan
from .gat import build_gat_model, predict_log_proba
from .graph import Graph
from .training import Trainer

UNLABELED = -1


class GATNodeClassifier(ClassifierMixin, BaseEstimator):
    """Two-layer graph attention classifier.

    The setting is transductive: ``X`` holds features for every node of
    ``graph`` and ``y`` marks unlabeled nodes with ``-1``. ``predict`` scores
    the same node set, so ``X`` at predict time must have ``graph.n`` rows.

    ``mode="pipeline"`` trains through the micro-batched executor with the
    given ``balance`` and ``chunks``.
    """

    def __init__(
        self,
        epochs=300,
        hidden=8,
        heads=8,
        out_heads=8,
        dropout=0.6,
        attn_dropout=0.6,
        lr=0.005,
        weight_decay=5e-4,
        mode="single",
        balance=(1, 2, 1, 2),
        chunks=1,
        strategy="sequential",
        random_state=0,
    ):
        self.epochs = epochs
        self.hidden = hidden
        self.heads = heads
        self.out_heads = out_heads
        self.dropout = dropout
        self.attn_dropout = attn_dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.mode = mode
        self.balance = balance
        self.chunks = chunks
        self.strategy = strategy
        self.random_state = random_state

    def fit(self, X, y, graph: Graph):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
        if not isinstance(graph, Graph) or graph.n != X.shape[0]:
            raise ValueError("graph must be a Graph with one node per row of X")
        labeled = y != UNLABELED
        if not labeled.any():
            raise ValueError("y has no labeled nodes")
        self.classes_, codes = np.unique(y[labeled], return_inverse=True)
        labels = np.zeros(X.shape[0], dtype=np.int64)
        labels[labeled] = codes

        self.graph_ = graph
        self.n_features_in_ = X.shape[1]
        self.model_ = build_gat_model(
            graph, X.shape[1], len(self.classes_), hidden=self.hidden, heads=self.heads,
            out_heads=self.out_heads, dropout=self.dropout, attn_dropout=self.attn_dropout, seed=self.random_state,
        )
        plan = SplitPlan(self.chunks, self.strategy, seed=self.random_state)
        self.loss_curve_ = []
        with Trainer(
            self.model_, X, labels, labeled, mode=self.mode, balance=self.balance, plan=plan,
            seed=self.random_state, lr=self.lr, weight_decay=self.weight_decay,
        ) as trainer:
            for epoch in range(1, self.epochs + 1):
                self.loss_curve_.append(trainer.run_epoch(epoch).loss)
        return self

    def _log_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape != (self.graph_.n, self.n_features_in_):
            raise ValueError(f"X must have shape {(self.graph_.n, self.n_features_in_)}, got {X.shape}")
        return predict_log_proba(self.model_, X)

    def predict_log_proba(self, X):
        return self._log_proba(X)

    def predict_proba(self, X):
        return np.exp(self._log_proba(X))

    def predict(self, X):
        logp = self._log_proba(X)
        return self.classes_[np.argmax(logp, axis=1)]

    def score(self, X, y, sample_weight=None):
        """Accuracy over the nodes whose label is not ``-1``."""
        y = np.asarray(y)
        keep = y != UNLABELED
        w = None if sample_weight is None else np.asarray(sample_weight)[keep]
        pred = self.predict(X)[keep]
        return float(np.average(pred == y[keep], weights=w))
