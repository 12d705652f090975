import csv
import json

import numpy as np
import pytest

from pipegat.datasets import Dataset
from pipegat.graph import from_edges
from pipegat.harness import BENCHMARK_COLUMNS, EPOCH_COLUMNS, RunConfig, benchmark, report_row, train
from pipegat.training import TrainingDiverged, accuracy


def test_accuracy_basics():
    logp = np.log(np.eye(3)[[0, 1, 2, 1]] + 1e-9)
    labels = np.array([0, 1, 2, 2])
    assert accuracy(logp, labels, np.array([1, 1, 1, 0], bool)) == 1.0
    assert accuracy(logp, labels, np.ones(4, bool)) == 0.75
    # ties go to the lowest class
    assert accuracy(np.zeros((2, 3)), np.array([0, 1]), np.ones(2, bool)) == 0.5
    with pytest.raises(ValueError):
        accuracy(logp, labels, np.zeros(4, bool))


def test_uniform_random_predictions_near_one_third():
    rng = np.random.default_rng(0)
    logp = rng.normal(size=(500, 3))
    labels = rng.integers(0, 3, 500)
    assert abs(accuracy(logp, labels, np.ones(500, bool)) - 1 / 3) < 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(epochs=0)
    with pytest.raises(ValueError):
        RunConfig(mode="single", chunks=2)
    with pytest.raises(ValueError):
        RunConfig.from_dict({"epochs": 3, "learning_rate": 0.1})
    with pytest.raises(ValueError, match="balance"):
        RunConfig(mode="pipeline", balance=(1, 1))
    cfg = RunConfig.from_dict({"balance": [2, 2, 2], "mode": "pipeline", "chunks": 2})
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_one_epoch_report(tmp_path, planted):
    rep = train(RunConfig(epochs=1, out=str(tmp_path)), planted)
    assert len(rep.records) == 1
    assert rep.mean_epoch_s == rep.first_epoch_s == rep.records[0].wall_ms / 1000
    data = json.loads((tmp_path / "report.json").read_text())
    assert len(data["records"]) == 1 and data["config"]["epochs"] == 1
    with (tmp_path / "epochs.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == EPOCH_COLUMNS and len(rows) == 2


def test_mean_epoch_is_recomputable(planted):
    rep = train(RunConfig(epochs=4), planted)
    secs = [r.wall_ms / 1000 for r in rep.records]
    assert rep.mean_epoch_s == pytest.approx(np.mean(secs[1:]))
    assert rep.rest_epochs_s == pytest.approx(sum(secs[1:]))


def test_pipeline_one_chunk_reproduces_single_mode(planted):
    single = train(RunConfig(epochs=15, seed=4), planted)
    pipe = train(RunConfig(epochs=15, seed=4, mode="pipeline", chunks=1), planted)
    a = np.array([r.train_loss for r in single.records])
    b = np.array([r.train_loss for r in pipe.records])
    assert np.all(np.abs(a - b) <= 1e-9 * np.abs(a))
    assert (single.val_acc, single.test_acc) == (pipe.val_acc, pipe.test_acc)
    assert single.rebuilds["total"] == 0
    assert pipe.rebuilds["per_epoch"] == [2] * 15


def test_reports_are_reproducible(tmp_path, planted):
    for name in ("a", "b"):
        train(RunConfig(epochs=5, seed=2, mode="pipeline", chunks=3, strategy="random_permuted",
                        out=str(tmp_path / name)), planted)

    def columns(name):
        with (tmp_path / name / "epochs.csv").open() as fh:
            return [[r["train_loss"], r["train_acc"], r["val_acc"]] for r in csv.DictReader(fh)]

    assert columns("a") == columns("b")


def test_nan_loss_aborts_with_diagnostic(planted):
    feats = planted.features.copy()
    feats[3, 0] = np.nan
    broken = Dataset(planted.graph, feats, planted.labels, planted.num_classes, planted.train_mask,
                     planted.val_mask, planted.test_mask)
    with pytest.raises(TrainingDiverged, match="epoch 1.*layer1:W"):
        train(RunConfig(epochs=2), broken)


def test_grid_of_one_equals_its_report_row(tmp_path, planted):
    cfg = RunConfig(epochs=3, mode="pipeline", chunks=2)
    rows = benchmark([cfg], tmp_path, planted)
    rep = train(cfg, planted)
    expected = report_row(cfg, rep)
    timing = {"epoch1_s", "epochs_rest_s", "avg_epoch_s", "bubble_frac"}
    assert {k: v for k, v in rows[0].items() if k not in timing} == {
        k: v for k, v in expected.items() if k not in timing
    }
    with (tmp_path / "benchmark.csv").open() as fh:
        assert next(csv.reader(fh)) == BENCHMARK_COLUMNS
    assert (tmp_path / "curves.csv").is_file()


def test_failed_run_is_recorded_and_grid_continues(planted):
    bad = RunConfig(epochs=1, mode="pipeline", chunks=200)  # more chunks than the 90 nodes
    good = RunConfig(epochs=1)
    rows = benchmark([bad, good], None, planted)
    assert "chunks" in rows[0]["error"] and rows[1]["error"] == ""


def ring_dataset(n=100, classes=4, seed=0):
    """Ring whose labels form contiguous arcs; features carry a noisy label signal."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) * classes // n
    feats = np.eye(classes)[labels] + rng.normal(size=(n, classes))
    train_mask = np.arange(n) % 10 == 5
    val_mask = ~train_mask & (np.arange(n) % 2 == 1)
    test_mask = ~train_mask & ~val_mask
    g = from_edges(n, np.arange(n), (np.arange(n) + 1) % n)
    return Dataset(g, feats, labels, classes, train_mask, val_mask, test_mask, "ring")


def test_ring_benchmark_retention_and_degradation():
    base = dict(epochs=150, hidden=4, heads=2, out_heads=1, dropout=0.0, attn_dropout=0.0, lr=0.02)
    with pytest.raises(ValueError):
        benchmark([], None, ring_dataset())
    acc = {"one": [], "seq": [], "rnd": []}
    for seed in range(3):
        grid = [
            RunConfig(mode="pipeline", chunks=1, seed=seed, **base),
            RunConfig(mode="pipeline", chunks=4, strategy="sequential", seed=seed, **base),
            RunConfig(mode="pipeline", chunks=4, strategy="random_permuted", seed=seed, **base),
        ]
        rows = benchmark(grid, None, ring_dataset(seed=seed))
        assert [r["error"] for r in rows] == ["", "", ""]
        one, seq, rnd = rows
        assert one["edge_retention"] == 1.0
        assert seq["edge_retention"] == 0.96  # 4 of the 100 ring edges cross a block boundary
        assert rnd["edge_retention"] < 0.5
        for key, row in zip(acc, rows):
            acc[key].append(row["val_acc"])
    med = {k: float(np.median(v)) for k, v in acc.items()}
    assert med["seq"] <= med["one"]
    assert med["rnd"] <= med["one"]
