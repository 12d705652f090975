"""Immutable CSR graphs and node-induced subgraphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    """Raised when graph arrays or node selections are malformed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Adjacency of ``n`` nodes in canonical CSR form.

    Row ``i`` lists the neighbours ``j`` that send messages to ``i``. Rows are
    sorted and free of duplicates, so two graphs are equal exactly when their
    arrays are equal. ``node_ids`` maps local row indices back to the ids of
    the root graph this one was cut from.
    """

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    node_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", _frozen(np.asarray(self.row_ptr, dtype=np.int64)))
        object.__setattr__(self, "col_idx", _frozen(np.asarray(self.col_idx, dtype=np.int64)))
        ids = np.arange(self.n, dtype=np.int64) if self.node_ids is None else self.node_ids
        object.__setattr__(self, "node_ids", _frozen(np.asarray(ids, dtype=np.int64)))

    @property
    def m(self) -> int:
        """Number of stored (directed) entries, self-loops included."""
        return int(self.col_idx.shape[0])

    @cached_property
    def rows(self) -> np.ndarray:
        """Row (receiving node) of every stored entry."""
        return _frozen(np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.row_ptr)))

    @cached_property
    def by_col(self) -> tuple[np.ndarray, np.ndarray]:
        """``(order, col_ptr)`` such that ``order[col_ptr[j]:col_ptr[j+1]]`` are the
        entry positions whose column is ``j``. Used to scatter-add over sources."""
        order = np.argsort(self.col_idx, kind="stable")
        counts = np.bincount(self.col_idx, minlength=self.n)
        col_ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=col_ptr[1:])
        return _frozen(order), _frozen(col_ptr)

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def num_undirected_edges(self) -> int:
        """Undirected edge count, self-loops excluded."""
        return int(np.count_nonzero(self.rows != self.col_idx)) // 2

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.node_ids, other.node_ids)
        )

    __hash__ = None

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.m})"

    def validate(self) -> None:
        """Check every structural invariant; raise :class:`GraphError` on the first failure."""
        rp, ci, n = self.row_ptr, self.col_idx, self.n
        if rp.shape != (n + 1,) or rp[0] != 0 or rp[-1] != ci.shape[0]:
            raise GraphError("row_ptr must have length n+1, start at 0 and end at m")
        if np.any(np.diff(rp) < 0):
            raise GraphError("row_ptr is not nondecreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise GraphError("col_idx entry out of range")
        rows = self.rows
        # strictly increasing within each row
        same_row = rows[1:] == rows[:-1]
        if np.any(ci[1:][same_row] <= ci[:-1][same_row]):
            raise GraphError("row entries are not strictly increasing")
        keys = rows * n + ci
        tkeys = np.sort(ci * n + rows)
        if not np.array_equal(keys, tkeys):
            raise GraphError("adjacency is not symmetric")
        loops = np.zeros(n, dtype=bool)
        loops[rows[rows == ci]] = True
        if not loops.all():
            raise GraphError("missing self-loop")
        if self.node_ids.shape != (n,):
            raise GraphError("node_ids must have length n")


def from_edges(n: int, u: Sequence[int], v: Sequence[int]) -> Graph:
    """Build the canonical graph for an undirected edge list.

    Edges are symmetrised and deduplicated and a self-loop is added to every
    node.
    """
    u = np.asarray(u, dtype=np.int64).ravel()
    v = np.asarray(v, dtype=np.int64).ravel()
    if u.shape != v.shape:
        raise GraphError("edge endpoint arrays differ in length")
    if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
        raise GraphError(f"edge endpoint out of range [0, {n})")
    loops = np.arange(n, dtype=np.int64)
    src = np.concatenate([u, v, loops])
    dst = np.concatenate([v, u, loops])
    keys = np.unique(dst * n + src)
    rows, cols = np.divmod(keys, n) if n else (keys, keys)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    return Graph(n, row_ptr, cols)


def _check_nodes(g: Graph, nodes) -> np.ndarray:
    nodes = np.asarray(nodes)
    if nodes.ndim != 1:
        raise GraphError("node selection must be one-dimensional")
    if nodes.size and not np.issubdtype(nodes.dtype, np.integer):
        raise GraphError("node selection must hold integers")
    nodes = nodes.astype(np.int64, copy=False)
    if nodes.size:
        if nodes[0] < 0 or nodes[-1] >= g.n or nodes.min() < 0 or nodes.max() >= g.n:
            raise GraphError(f"node id out of range [0, {g.n})")
        if np.any(np.diff(nodes) <= 0):
            raise GraphError("node selection must be sorted and free of duplicates")
    return nodes


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Graph over ``nodes`` keeping exactly the entries with both ends selected.

    ``nodes`` must be sorted and unique; local index ``k`` corresponds to
    ``nodes[k]`` and ``node_ids`` is composed with the parent's mapping.
    """
    nodes = _check_nodes(g, nodes)
    k = nodes.shape[0]
    local = np.full(g.n, -1, dtype=np.int64)
    local[nodes] = np.arange(k, dtype=np.int64)

    starts = g.row_ptr[nodes]
    lens = g.row_ptr[nodes + 1] - starts
    total = int(lens.sum())
    # positions of every entry in the selected rows, row by row
    offsets = np.repeat(starts - np.cumsum(lens) + lens, lens)
    pos = offsets + np.arange(total, dtype=np.int64)
    cols = local[g.col_idx[pos]]
    keep = cols >= 0
    rows = np.repeat(np.arange(k, dtype=np.int64), lens)[keep]
    row_ptr = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=k), out=row_ptr[1:])
    return Graph(k, row_ptr, cols[keep], g.node_ids[nodes])


def edge_retention(g: Graph, parts) -> float:
    """Fraction of non-loop entries of ``g`` that survive inside the induced
    subgraphs of ``parts``, which must partition the nodes of ``g``."""
    parts = [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
    allnodes = np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)
    if not np.array_equal(allnodes, np.arange(g.n)):
        raise GraphError("parts do not partition the graph's nodes")
    total = g.m - g.n  # every node has exactly one self-loop
    if total == 0:
        return 1.0
    kept = sum(sub.m - sub.n for sub in (induced_subgraph(g, p) for p in parts))
    return kept / total
