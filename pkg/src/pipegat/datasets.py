"""Node-classification datasets: the on-disk directory format and a synthetic generator.

A dataset directory holds five UTF-8 text files::

    meta.json      {"name": str, "num_nodes": int, "num_features": int, "num_classes": int}
    features.csv   n rows of d comma-separated floats (row i = node i)
    labels.csv     n rows, one integer each (-1 = unlabeled)
    edges.csv      one "u,v" pair per line, 0-based, undirected
    splits.csv     n rows, each one of train|val|test|none
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError, from_edges

SPLIT_NAMES = ("train", "val", "test", "none")


class DatasetError(ValueError):
    """Raised when a dataset directory or in-memory dataset is invalid."""


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str = "dataset"
    edge_records: int | None = None  # lines of the source edge list, duplicates included

    def __post_init__(self):
        for attr in ("features", "labels", "train_mask", "val_mask", "test_mask"):
            a = np.ascontiguousarray(getattr(self, attr))
            a.setflags(write=False)
            object.__setattr__(self, attr, a)
        self.validate()

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def validate(self) -> None:
        n = self.graph.n
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features must be an {n} x d matrix, got shape {self.features.shape}")
        if self.features.dtype != np.float64:
            raise DatasetError("features must be float64")
        if self.labels.shape != (n,):
            raise DatasetError(f"labels must have length {n}")
        if np.any(self.labels >= self.num_classes) or np.any(self.labels < -1):
            raise DatasetError(f"label outside [-1, {self.num_classes})")
        masks = (self.train_mask, self.val_mask, self.test_mask)
        for m in masks:
            if m.shape != (n,) or m.dtype != bool:
                raise DatasetError(f"masks must be boolean arrays of length {n}")
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(masks[1] & masks[2]):
            raise DatasetError("train/val/test masks overlap")
        if np.any(self.labels[masks[0] | masks[1] | masks[2]] < 0):
            raise DatasetError("a masked node is unlabeled")

    def summary(self) -> dict:
        return {
            "name": self.name,
            "num_nodes": self.n,
            "num_edges": self.graph.num_undirected_edges(),
            "edge_records": self.edge_records,
            "num_features": self.num_features,
            "num_classes": self.num_classes,
            "train": int(self.train_mask.sum()),
            "val": int(self.val_mask.sum()),
            "test": int(self.test_mask.sum()),
        }


def _read_lines(path: Path) -> list[str]:
    with path.open(encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def load_dataset(path) -> Dataset:
    """Read and validate a dataset directory.

    Edges are symmetrised, deduplicated and given self-loops on load.
    """
    root = Path(path)
    files = {name: root / name for name in ("meta.json", "features.csv", "labels.csv", "edges.csv", "splits.csv")}
    for name, p in files.items():
        if not p.is_file():
            raise DatasetError(f"missing file: {p}")

    meta = json.loads(files["meta.json"].read_text(encoding="utf-8"))
    try:
        n = int(meta["num_nodes"])
        d = int(meta["num_features"])
        num_classes = int(meta["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"meta.json lacks a valid field: {exc}") from None

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            features = np.loadtxt(files["features.csv"], delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"features.csv: non-rectangular or non-numeric rows ({exc})") from None
    if features.shape != (n, d):
        raise DatasetError(f"features.csv has shape {features.shape}, meta.json says ({n}, {d})")

    try:
        labels = np.array([int(x) for x in _read_lines(files["labels.csv"])], dtype=np.int64)
    except ValueError as exc:
        raise DatasetError(f"labels.csv: {exc}") from None
    if labels.shape != (n,):
        raise DatasetError(f"labels.csv has {labels.shape[0]} rows, expected {n}")
    if np.any(labels >= num_classes):
        bad = int(np.argmax(labels >= num_classes))
        raise DatasetError(f"labels.csv: node {bad} has label {labels[bad]} >= num_classes {num_classes}")

    edge_lines = _read_lines(files["edges.csv"])
    try:
        pairs = np.array([line.split(",") for line in edge_lines], dtype=np.int64).reshape(-1, 2)
    except ValueError as exc:
        raise DatasetError(f"edges.csv: malformed line ({exc})") from None
    try:
        graph = from_edges(n, pairs[:, 0], pairs[:, 1])
    except GraphError as exc:
        raise DatasetError(f"edges.csv: {exc}") from None

    splits = _read_lines(files["splits.csv"])
    if len(splits) != n:
        raise DatasetError(f"splits.csv has {len(splits)} rows, expected {n}")
    unknown = set(splits) - set(SPLIT_NAMES)
    if unknown:
        raise DatasetError(f"splits.csv: unknown split names {sorted(unknown)}")
    splits = np.array(splits)

    return Dataset(
        graph=graph,
        features=features,
        labels=labels,
        num_classes=num_classes,
        train_mask=splits == "train",
        val_mask=splits == "val",
        test_mask=splits == "test",
        name=str(meta.get("name", root.name)),
        edge_records=len(edge_lines),
    )


def save_dataset(ds: Dataset, path) -> Path:
    """Write ``ds`` in the directory format read by :func:`load_dataset`."""
    root = Path(path)
    os.makedirs(root, exist_ok=True)
    meta = {"name": ds.name, "num_nodes": ds.n, "num_features": ds.num_features, "num_classes": ds.num_classes}
    (root / "meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")
    np.savetxt(root / "features.csv", ds.features, delimiter=",", fmt="%.17g")
    np.savetxt(root / "labels.csv", ds.labels, fmt="%d")
    g = ds.graph
    upper = g.rows < g.col_idx
    np.savetxt(root / "edges.csv", np.column_stack([g.rows[upper], g.col_idx[upper]]), delimiter=",", fmt="%d")
    split = np.full(ds.n, "none", dtype=object)
    split[ds.train_mask] = "train"
    split[ds.val_mask] = "val"
    split[ds.test_mask] = "test"
    (root / "splits.csv").write_text("\n".join(split) + "\n", encoding="utf-8")
    return root


def make_planted_dataset(
    n_per_class: int = 100,
    num_classes: int = 3,
    num_features: int = 32,
    p_in: float = 0.05,
    p_out: float = 0.005,
    feature_signal: float = 1.0,
    train_per_class: int = 10,
    num_val: int | None = None,
    shuffle: bool = True,
    seed: int = 0,
    name: str = "planted",
) -> Dataset:
    """Planted-partition graph with class-dependent noisy features.

    Nodes of the same class connect with probability ``p_in``, others with
    ``p_out``. The split follows the citation-benchmark layout: the first
    ``train_per_class * num_classes`` node ids are training nodes, then the
    validation nodes, and the remainder is test. With ``shuffle`` the class
    of a node is unrelated to its id.
    """
    rng = np.random.default_rng(seed)
    n = n_per_class * num_classes
    labels = np.repeat(np.arange(num_classes), n_per_class)
    if shuffle:
        labels = labels[rng.permutation(n)]
    else:
        labels = np.sort(labels)
    # train nodes must cover every class evenly, so reorder the first block
    order = np.concatenate([np.flatnonzero(labels == c)[:train_per_class] for c in range(num_classes)])
    rest = np.setdiff1d(np.arange(n), order)
    if shuffle:
        order = order[rng.permutation(order.size)]
    else:
        order = np.sort(order)
    perm = np.concatenate([order, rest])
    labels = labels[perm]

    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    u, v = np.nonzero(upper)

    centers = rng.normal(size=(num_classes, num_features))
    features = feature_signal * centers[labels] + rng.normal(size=(n, num_features))

    n_train = train_per_class * num_classes
    if num_val is None:
        num_val = (n - n_train) // 2
    idx = np.arange(n)
    return Dataset(
        graph=from_edges(n, u, v),
        features=features.astype(np.float64),
        labels=labels.astype(np.int64),
        num_classes=num_classes,
        train_mask=idx < n_train,
        val_mask=(idx >= n_train) & (idx < n_train + num_val),
        test_mask=idx >= n_train + num_val,
        name=name,
    )
