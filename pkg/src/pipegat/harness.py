"""Training runs, run reports and benchmark grids."""

from __future__ import annotations

import csv
import json
import logging
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .batching import SplitPlan
from .datasets import Dataset, load_dataset
from .gat import build_gat_model
from .graph import edge_retention
from .training import Trainer, accuracy

log = logging.getLogger(__name__)

MODEL_LAYERS = 6  # Dropout, GAT, activation, Dropout, GAT, LogSoftmax
EPOCH_COLUMNS = ["epoch", "wall_ms", "train_loss", "train_acc", "val_acc"]
BENCHMARK_COLUMNS = [
    "framework_mode",
    "balance",
    "chunks",
    "strategy",
    "epoch1_s",
    "epochs_rest_s",
    "avg_epoch_s",
    "train_loss",
    "train_acc",
    "val_acc",
    "test_acc",
    "edge_retention",
    "rebuilds",
    "bubble_frac",
    "error",
]


@dataclass
class RunConfig:
    dataset: str = ""
    epochs: int = 300
    seed: int = 0
    mode: str = "single"
    balance: tuple = (1, 2, 1, 2)
    chunks: int = 1
    strategy: str = "sequential"
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    dropout: float = 0.6
    attn_dropout: float = 0.6
    hidden: int = 8
    heads: int = 8
    out_heads: int = 8
    activation: str = "elu"
    leaky_slope: float = 0.2
    rebuild_delay: float = 0.0
    out: str | None = None

    def __post_init__(self):
        self.balance = tuple(int(b) for b in self.balance)
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.mode not in ("single", "pipeline"):
            raise ValueError(f"mode must be 'single' or 'pipeline', got {self.mode!r}")
        SplitPlan(self.chunks, self.strategy)  # validates chunks and strategy
        if self.mode == "pipeline" and sum(self.balance) != MODEL_LAYERS:
            raise ValueError(f"balance {list(self.balance)} must assign all {MODEL_LAYERS} model layers")
        if self.mode == "single" and self.chunks != 1:
            raise ValueError("single mode runs without micro-batching; use mode='pipeline' for chunks > 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["balance"] = list(self.balance)
        return d


@dataclass
class EpochRecord:
    epoch: int
    wall_ms: float
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class RunReport:
    config: dict
    records: list[EpochRecord]
    first_epoch_s: float
    rest_epochs_s: float
    mean_epoch_s: float
    test_acc: float
    val_acc: float
    edge_retention: float
    rebuilds: dict = field(default_factory=dict)
    bubble: dict | None = None
    engine_version: str = __version__

    @staticmethod
    def timing_summary(records: list[EpochRecord]) -> tuple[float, float, float]:
        """``(first epoch, sum of later epochs, mean of later epochs)`` in seconds.

        With a single epoch the mean falls back to that epoch's time.
        """
        secs = [r.wall_ms / 1000.0 for r in records]
        rest = secs[1:]
        return secs[0], float(sum(rest)), float(np.mean(rest)) if rest else secs[0]

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out_dir) -> Path:
        """Write ``report.json`` and ``epochs.csv`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        with (out / "epochs.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EPOCH_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, f"{r.wall_ms:.3f}", repr(r.train_loss), repr(r.train_acc), repr(r.val_acc)])
        return out


def train(cfg: RunConfig, dataset: Dataset | None = None) -> RunReport:
    """Train the GAT model described by ``cfg``.

    Each epoch is one optimizer step on the training mask, followed by an
    eval-mode pass over the full graph for train/val accuracy. Test accuracy
    is measured once, after the last epoch.
    """
    ds = dataset if dataset is not None else load_dataset(cfg.dataset)
    seq = build_gat_model(
        ds.graph,
        ds.num_features,
        ds.num_classes,
        hidden=cfg.hidden,
        heads=cfg.heads,
        out_heads=cfg.out_heads,
        dropout=cfg.dropout,
        attn_dropout=cfg.attn_dropout,
        activation=cfg.activation,
        leaky_slope=cfg.leaky_slope,
        seed=cfg.seed,
        rebuild_delay=cfg.rebuild_delay,
    )
    plan = SplitPlan(cfg.chunks, cfg.strategy, seed=cfg.seed)
    retention = edge_retention(ds.graph, plan.node_blocks(np.arange(ds.n))) if cfg.chunks > 1 else 1.0

    records: list[EpochRecord] = []
    rebuild_counts: list[int] = []
    rebuild_secs = 0.0
    bubble = None
    with Trainer(
        seq,
        ds.features,
        ds.labels,
        ds.train_mask,
        mode=cfg.mode,
        balance=cfg.balance,
        plan=plan,
        seed=cfg.seed,
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    ) as trainer:
        for epoch in range(1, cfg.epochs + 1):
            st = trainer.run_epoch(epoch)
            logp = trainer.log_proba()
            rec = EpochRecord(
                epoch,
                st.seconds * 1000.0,
                st.loss,
                accuracy(logp, ds.labels, ds.train_mask),
                accuracy(logp, ds.labels, ds.val_mask),
            )
            records.append(rec)
            rebuild_counts.append(st.rebuilds)
            rebuild_secs += st.rebuild_seconds
            bubble = st.bubble or bubble
            log.debug("epoch %d loss %.4f train %.4f val %.4f", epoch, rec.train_loss, rec.train_acc, rec.val_acc)
        logp = trainer.log_proba()

    first, rest, mean = RunReport.timing_summary(records)
    report = RunReport(
        config=cfg.to_dict(),
        records=records,
        first_epoch_s=first,
        rest_epochs_s=rest,
        mean_epoch_s=mean,
        test_acc=accuracy(logp, ds.labels, ds.test_mask),
        val_acc=accuracy(logp, ds.labels, ds.val_mask),
        edge_retention=retention,
        rebuilds={"per_epoch": rebuild_counts, "total": int(sum(rebuild_counts)), "seconds": rebuild_secs},
        bubble=bubble,
    )
    if cfg.out:
        report.write(cfg.out)
    return report


def report_row(cfg: RunConfig, report: RunReport | None, error: str = "") -> dict:
    row = {c: "" for c in BENCHMARK_COLUMNS}
    row.update(
        framework_mode=cfg.mode,
        balance="-".join(map(str, cfg.balance)) if cfg.mode == "pipeline" else "",
        chunks=cfg.chunks,
        strategy=cfg.strategy,
        error=error,
    )
    if report is not None:
        last = report.records[-1]
        bub = report.bubble["bubble_fraction"] if report.bubble else [0.0]
        row.update(
            epoch1_s=report.first_epoch_s,
            epochs_rest_s=report.rest_epochs_s,
            avg_epoch_s=report.mean_epoch_s,
            train_loss=last.train_loss,
            train_acc=last.train_acc,
            val_acc=report.val_acc,
            test_acc=report.test_acc,
            edge_retention=report.edge_retention,
            rebuilds=report.rebuilds["total"],
            bubble_frac=float(np.mean(bub)),
        )
    return row


def benchmark(grid: list[RunConfig], out_dir=None, dataset: Dataset | None = None) -> list[dict]:
    """Run every config and return one table row per config.

    A failing run is recorded in its row's ``error`` column and the grid
    carries on. With ``out_dir``, writes ``benchmark.csv`` and the per-epoch
    curves of every run to ``curves.csv``.
    """
    if not grid:
        raise ValueError("benchmark needs at least one config")
    cache: dict[str, Dataset] = {}
    rows, curves = [], []
    for i, cfg in enumerate(grid):
        try:
            ds = dataset
            if ds is None:
                if cfg.dataset not in cache:
                    cache[cfg.dataset] = load_dataset(cfg.dataset)
                ds = cache[cfg.dataset]
            report = train(cfg, ds)
        except Exception as exc:  # noqa: BLE001 - recorded in the table
            log.warning("run %d failed: %s", i, exc)
            log.debug("%s", traceback.format_exc())
            rows.append(report_row(cfg, None, f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(report_row(cfg, report))
        curves += [dict(run=i, chunks=cfg.chunks, strategy=cfg.strategy, **asdict(r)) for r in report.records]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "benchmark.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, BENCHMARK_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        with (out / "curves.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["run", "chunks", "strategy"] + EPOCH_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(curves)
    return rows
