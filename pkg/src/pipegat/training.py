"""Epoch driver shared by the harness and the estimator."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .batching import BatchTuple, SplitPlan
from .gat import LayerSeq, predict_log_proba
from .nn import Adam
from .pipeline import GPipe, StepResult, bubble_stats, full_batch_step


class TrainingDiverged(FloatingPointError):
    pass


def accuracy(logp: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Share of masked rows whose argmax matches the label (ties go to the lowest class)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("accuracy needs a nonempty mask")
    pred = np.argmax(logp[mask], axis=1)
    return float(np.mean(pred == np.asarray(labels)[mask]))


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float
    rebuilds: int = 0
    rebuild_seconds: float = 0.0
    bubble: dict | None = None


class Trainer:
    """Runs training epochs in ``single`` (whole graph, no rebuilds) or
    ``pipeline`` mode. Evaluation is left to the caller."""

    def __init__(
        self,
        seq: LayerSeq,
        features: np.ndarray,
        labels: np.ndarray,
        train_mask: np.ndarray,
        mode: str = "single",
        balance=(1, 2, 1, 2),
        plan: SplitPlan | None = None,
        seed: int = 0,
        lr: float = 0.005,
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 5e-4,
    ):
        if mode not in ("single", "pipeline"):
            raise ValueError(f"mode must be 'single' or 'pipeline', got {mode!r}")
        self.seq, self.mode, self.seed = seq, mode, seed
        self.labels = np.asarray(labels)
        self.train_mask = np.asarray(train_mask, dtype=bool)
        self.batch = BatchTuple(np.arange(features.shape[0]), np.asarray(features, dtype=np.float64))
        self.plan = plan or SplitPlan()
        if self.plan.chunks > features.shape[0]:
            raise ValueError("more chunks than nodes")
        self.optimizer = Adam(seq.params, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        self.pipe = GPipe(seq, balance, self.plan.chunks) if mode == "pipeline" else None

    def run_epoch(self, epoch: int) -> EpochStats:
        t0 = time.perf_counter()
        self.optimizer.zero_grad()
        result: StepResult | None = None
        if self.pipe is None:
            loss = full_batch_step(self.seq, self.batch, self.labels, self.train_mask, True, self.seed, epoch)
        else:
            result = self.pipe.step(
                self.batch, self.labels, self.train_mask, training=True, seed=self.seed, step=epoch, plan=self.plan
            )
            loss = result.loss
        if not np.isfinite(loss):
            norms = {f"layer{layer.index}:{p.name}": float(np.linalg.norm(p.value)) for layer in self.seq for p in layer.params}
            raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}; parameter norms {norms}")
        self.optimizer.step()
        seconds = time.perf_counter() - t0
        stats = EpochStats(epoch, loss, seconds)
        if result is not None:
            stats.rebuilds = result.rebuilds["count"]
            stats.rebuild_seconds = result.rebuilds["seconds"]
            stats.bubble = bubble_stats(result.timeline)
        return stats

    def log_proba(self) -> np.ndarray:
        return predict_log_proba(self.seq, self.batch.feats)

    def close(self) -> None:
        if self.pipe is not None:
            self.pipe.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
