import sys
from pathlib import Path

import numpy as np
import pytest

from pipegat.datasets import load_dataset, make_planted_dataset
from pipegat.graph import from_edges

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"


def random_graph(rng, n, p=0.2):
    """Erdos-Renyi style edge list turned into a canonical graph."""
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return from_edges(n, iu[keep], ju[keep])


def dense_adjacency(g):
    a = np.zeros((g.n, g.n), dtype=bool)
    for i in range(g.n):
        a[i, g.col_idx[g.row_ptr[i] : g.row_ptr[i + 1]]] = True
    return a


@pytest.fixture(scope="session")
def cora():
    path = DATA / "cora"
    if not (path / "meta.json").is_file():
        pytest.skip("data/cora is not built (scripts/build_cora.py)")
    return load_dataset(path)


@pytest.fixture(scope="session")
def planted():
    return make_planted_dataset(
        n_per_class=30, num_classes=3, num_features=12, p_in=0.2, p_out=0.02, train_per_class=5, num_val=20, seed=3
    )


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "VERDICTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
