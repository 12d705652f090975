#!/usr/bin/env python
"""Assemble data/cora in the pipegat directory format from PyPI-hosted files.

Sources (both fetched with ``pip download --no-deps`` unless given):

* ``graphdatascience`` wheel: Cora content (features + subject) and citations
  as parquet.
* ``verbcl-graph4nlp-cpu`` wheel: the Planetoid ``ind.cora.{x,tx,allx,graph,
  test.index}`` files (no labels).

Rows are matched by feature vector to recover the Planetoid node order and
its public split (train = ids 0..139, val = 140..639, test = test.index).
Feature-identical rows are disambiguated by their neighbourhoods; the few
that remain are label- and structure-identical twins and are assigned in
order.

Requires pandas + pyarrow + scipy.
"""

from __future__ import annotations

import argparse
import io
import pickle
import subprocess
import sys
import tempfile
import zipfile
from collections import defaultdict
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from pipegat.datasets import Dataset, save_dataset  # noqa: E402
from pipegat.graph import from_edges  # noqa: E402

GDS = "graphdatascience==2.2"
G4NLP = "verbcl-graph4nlp-cpu==0.1.0"
PLANETOID_PREFIX = "graph4nlp/pytorch/test/link_prediction/data/"


def fetch(spec: str, dest: Path) -> Path:
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", str(dest), spec], check=True)
    name = spec.split("==")[0].replace("-", "_")
    return next(p for p in dest.glob("*.whl") if p.name.lower().startswith(name))


def read_gds(wheel: Path):
    z = zipfile.ZipFile(wheel)
    base = "graphdatascience/resources/cora/"
    nodes = pd.read_parquet(io.BytesIO(z.read(base + "cora_nodes.parquet.gzip")))
    rels = pd.read_parquet(io.BytesIO(z.read(base + "cora_rels.parquet.gzip")))
    return nodes, rels


def read_planetoid(wheel: Path):
    z = zipfile.ZipFile(wheel)

    def load(name):
        return pickle.loads(z.read(PLANETOID_PREFIX + "ind.cora." + name), encoding="latin1")

    tx, allx, graph = load("tx"), load("allx"), load("graph")
    test_idx = np.array([int(x) for x in z.read(PLANETOID_PREFIX + "ind.cora.test.index").split()])
    feats = sp.vstack([allx, tx]).tolil()
    feats[test_idx, :] = feats[np.sort(test_idx), :]
    return np.asarray(feats.todense()).astype(np.int8), graph, test_idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "cora"))
    ap.add_argument("--gds-wheel")
    ap.add_argument("--planetoid-wheel")
    args = ap.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        gds_wheel = Path(args.gds_wheel) if args.gds_wheel else fetch(GDS, Path(tmp))
        pl_wheel = Path(args.planetoid_wheel) if args.planetoid_wheel else fetch(G4NLP, Path(tmp))
        nodes, rels = read_gds(gds_wheel)
        F, pgraph, test_idx = read_planetoid(pl_wheel)

    G = np.array(nodes.features.tolist(), dtype=np.int8)
    n = G.shape[0]
    pid = {p: i for i, p in enumerate(nodes.nodeId)}
    gadj, padj = defaultdict(set), defaultdict(set)
    for s, t in zip(rels.sourceNodeId, rels.targetNodeId):
        a, b = pid[s], pid[t]
        if a != b:
            gadj[a].add(b)
            gadj[b].add(a)
    for k, vs in pgraph.items():
        for v in vs:
            if k != v:
                padj[k].add(v)
                padj[v].add(k)

    by_feat = defaultdict(list)
    for i, row in enumerate(G):
        by_feat[row.tobytes()].append(i)
    match = np.full(n, -1)
    for i, row in enumerate(F):
        cands = by_feat[row.tobytes()]
        if not cands:
            raise SystemExit(f"planetoid row {i} has no feature match")
        if len(cands) == 1:
            match[i] = cands[0]
    while True:
        used, changed = set(match[match >= 0]), 0
        for i in np.flatnonzero(match < 0):
            known = {match[j] for j in padj[i] if match[j] >= 0}
            good = [c for c in by_feat[F[i].tobytes()] if c not in used and known <= gadj[c] and len(gadj[c]) == len(padj[i])]
            if len(good) == 1:
                match[i] = good[0]
                used.add(good[0])
                changed += 1
        if not changed:
            break
    labels_gds = nodes.subject.to_numpy()
    for i in np.flatnonzero(match < 0):
        used = set(match[match >= 0])
        c = next(c for c in by_feat[F[i].tobytes()] if c not in used)
        match[i] = c
    assert len(set(match)) == n

    inv = np.empty(n, dtype=np.int64)
    inv[match] = np.arange(n)
    src = np.array([inv[pid[s]] for s in rels.sourceNodeId])
    dst = np.array([inv[pid[t]] for t in rels.targetNodeId])
    labels = labels_gds[match].astype(np.int64)
    idx = np.arange(n)
    test = np.zeros(n, dtype=bool)
    test[test_idx] = True
    ds = Dataset(
        graph=from_edges(n, src, dst),
        features=F.astype(np.float64),
        labels=labels,
        num_classes=7,
        train_mask=idx < 140,
        val_mask=(idx >= 140) & (idx < 640),
        test_mask=test,
        name="cora",
    )
    out = save_dataset(ds, args.out)
    # keep the raw citation records (5429 lines) rather than the deduplicated set
    np.savetxt(out / "edges.csv", np.column_stack([src, dst]), delimiter=",", fmt="%d")
    np.savetxt(out / "features.csv", F, delimiter=",", fmt="%d")
    print(f"wrote {out}: {ds.summary()}")


if __name__ == "__main__":
    main()
