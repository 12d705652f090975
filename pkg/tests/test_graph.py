import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from pipegat.graph import Graph, GraphError, edge_retention, from_edges, induced_subgraph


def brute_force_induced(g, nodes):
    """Filter the entry list of ``g`` by membership, then relabel."""
    pos = {int(v): k for k, v in enumerate(nodes)}
    entries = sorted(
        (pos[int(r)], pos[int(c)]) for r, c in zip(g.rows, g.col_idx) if int(r) in pos and int(c) in pos
    )
    row_ptr = np.zeros(len(nodes) + 1, dtype=np.int64)
    for r, _ in entries:
        row_ptr[r + 1] += 1
    return np.cumsum(row_ptr), np.array([c for _, c in entries], dtype=np.int64)


def test_path_of_four():
    g = from_edges(4, [0, 1, 2], [1, 2, 3])
    assert g.row_ptr.tolist() == [0, 2, 5, 8, 10]
    assert g.col_idx.tolist() == [0, 1, 0, 1, 2, 1, 2, 3, 2, 3]
    g.validate()


def test_duplicates_and_reversed_edges_collapse():
    a = from_edges(3, [0, 1, 0, 2], [1, 0, 1, 1])
    b = from_edges(3, [0, 1], [1, 2])
    assert a == b
    assert a.num_undirected_edges() == 2


def test_endpoint_out_of_range():
    with pytest.raises(GraphError):
        from_edges(3, [0], [3])


def test_validate_rejects_asymmetric():
    g = Graph(2, [0, 2, 3], [0, 1, 1])
    with pytest.raises(GraphError, match="symmetric"):
        g.validate()


def test_validate_rejects_missing_loop():
    with pytest.raises(GraphError, match="self-loop"):
        Graph(2, [0, 1, 2], [1, 0]).validate()


def test_arrays_are_read_only():
    g = from_edges(3, [0], [1])
    with pytest.raises(ValueError):
        g.col_idx[0] = 2


def test_four_cycle_split_in_halves():
    g = from_edges(4, [0, 1, 2, 3], [1, 2, 3, 0])
    sub = induced_subgraph(g, [0, 1])
    assert sub.col_idx.tolist() == [0, 1, 0, 1]
    assert sub.node_ids.tolist() == [0, 1]
    assert edge_retention(g, [[0, 1], [2, 3]]) == 0.5


def test_edge_retention_needs_a_partition():
    g = from_edges(4, [0], [1])
    with pytest.raises(GraphError):
        edge_retention(g, [[0, 1], [1, 2, 3]])
    assert edge_retention(from_edges(3, [], []), [[0], [1, 2]]) == 1.0


@pytest.mark.parametrize("nodes", [[1, 0], [0, 0], [5], np.array([[0]])])
def test_bad_selection(nodes):
    g = from_edges(4, [0, 1], [1, 2])
    with pytest.raises(GraphError):
        induced_subgraph(g, nodes)


def test_empty_selection():
    sub = induced_subgraph(from_edges(3, [0], [1]), [])
    assert sub.n == 0 and sub.m == 0


def test_induced_matches_brute_force_on_200_graphs():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(1, 51))
        g = random_graph(rng, n, p=float(rng.uniform(0.0, 0.4)))
        nodes = np.flatnonzero(rng.random(n) < rng.uniform(0.1, 1.0))
        sub = induced_subgraph(g, nodes)
        row_ptr, col_idx = brute_force_induced(g, nodes)
        assert np.array_equal(sub.row_ptr, row_ptr)
        assert np.array_equal(sub.col_idx, col_idx)
        assert np.array_equal(sub.node_ids, nodes)
        sub.validate()


def test_relabelling_nodes_permutes_the_graph():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 20, 0.3)
    perm = rng.permutation(20)
    h = from_edges(20, perm[g.rows], perm[g.col_idx])
    a = np.zeros((20, 20), bool)
    a[g.rows, g.col_idx] = True
    b = np.zeros((20, 20), bool)
    b[h.rows, h.col_idx] = True
    assert np.array_equal(b[np.ix_(perm, perm)], a)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_induced_subgraph_composes(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 0.3)
    a = np.flatnonzero(rng.random(n) < 0.7)
    b = a[rng.random(a.size) < 0.6]
    inner = induced_subgraph(g, a)
    local_b = np.searchsorted(a, b)
    assert induced_subgraph(inner, local_b) == induced_subgraph(g, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_from_edges_is_canonical(n, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.integers(0, n, 3 * n), rng.integers(0, n, 3 * n)
    g = from_edges(n, u, v)
    g.validate()
    order = rng.permutation(u.size)
    assert from_edges(n, v[order], u[order]) == g
