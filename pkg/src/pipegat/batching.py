"""Micro-batching of ``(node_ids, feats)`` tuples.

The default ``sequential`` strategy cuts the node-id tensor into contiguous
index blocks, exactly like a pipeline library that knows nothing about the
graph. ``random_permuted`` is a control that shuffles node ids with a seeded
generator before cutting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("sequential", "random_permuted")


@dataclass(frozen=True, eq=False)
class BatchTuple:
    """Rows of features tagged with the global ids of the nodes they belong to."""

    node_ids: np.ndarray
    feats: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.node_ids, dtype=np.int64)
        if ids.ndim != 1 or self.feats.ndim != 2 or self.feats.shape[0] != ids.shape[0]:
            raise ValueError(f"node_ids {ids.shape} and feats {self.feats.shape} do not line up")
        object.__setattr__(self, "node_ids", ids)

    def __len__(self):
        return int(self.node_ids.shape[0])

    def with_feats(self, feats: np.ndarray) -> "BatchTuple":
        return BatchTuple(self.node_ids, feats)

    def check_sorted(self) -> None:
        if np.any(np.diff(self.node_ids) <= 0):
            raise ValueError("node_ids must be strictly increasing")


def block_sizes(n: int, chunks: int) -> list[int]:
    """Sizes of ``chunks`` near-equal blocks, larger blocks first."""
    if chunks < 1 or chunks > n:
        raise ValueError(f"chunks must lie in [1, {n}], got {chunks}")
    q, r = divmod(n, chunks)
    return [q + 1] * r + [q] * (chunks - r)


@dataclass(frozen=True)
class SplitPlan:
    chunks: int = 1
    strategy: str = "sequential"
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.chunks < 1:
            raise ValueError("chunks must be at least 1")

    def node_blocks(self, node_ids: np.ndarray) -> list[np.ndarray]:
        """Split the row positions ``0..len(node_ids)-1`` into ``chunks`` sorted arrays."""
        node_ids = np.asarray(node_ids, dtype=np.int64)
        order = np.arange(node_ids.shape[0])
        if self.strategy == "random_permuted":
            order = np.random.default_rng(self.seed).permutation(order)
        bounds = np.cumsum([0] + block_sizes(order.shape[0], self.chunks))
        blocks = [order[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        if self.strategy == "random_permuted":
            blocks = [np.sort(b) for b in blocks]
        return blocks


def split_microbatches(batch: BatchTuple, plan: SplitPlan) -> list[BatchTuple]:
    """Split ids and feature rows in lockstep according to ``plan``."""
    if plan.chunks == 1:
        return [batch]
    out = []
    for rows in plan.node_blocks(batch.node_ids):
        if plan.strategy == "sequential":
            sl = slice(int(rows[0]), int(rows[-1]) + 1)
            out.append(BatchTuple(batch.node_ids[sl], batch.feats[sl]))
        else:
            out.append(BatchTuple(batch.node_ids[rows], batch.feats[rows]))
    return out


def concat_microbatches(parts: list[BatchTuple]) -> BatchTuple:
    return BatchTuple(np.concatenate([p.node_ids for p in parts]), np.concatenate([p.feats for p in parts]))


def split_mask(global_mask: np.ndarray, labels: np.ndarray, node_ids: np.ndarray):
    """Restrict a node mask and labels to one micro-batch.

    Returns ``(local_mask, local_labels, weight)``. ``weight`` is the share of
    the globally masked nodes that fall in this micro-batch, so weighting each
    micro-batch's masked-mean loss by it sums to the full-batch masked mean.
    """
    global_mask = np.asarray(global_mask, dtype=bool)
    local_mask = global_mask[node_ids]
    total = int(global_mask.sum())
    weight = float(local_mask.sum()) / total if total else 0.0
    return local_mask, np.asarray(labels)[node_ids], weight
