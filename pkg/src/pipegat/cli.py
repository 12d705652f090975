"""Command-line entry point: ``pipegat {train,benchmark,check-grad,inspect}``.

Exit status is 0 on success, 1 when the arguments, config file or dataset
are invalid, and 2 when a run fails after validation (including a failed
gradient check). Log verbosity comes from the ``PIPEGAT_LOG`` environment
variable (``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .batching import STRATEGIES, BatchTuple, SplitPlan
from .datasets import DatasetError, load_dataset
from .gat import GatLayerParams, build_gat_model, gat_backward, gat_forward
from .graph import from_edges
from .harness import RunConfig, benchmark, train
from .nn import Linear, RngStream, grad_check
from .pipeline import GPipe

log = logging.getLogger("pipegat")

GRAD_TOL = 1e-4


class UsageError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _run_flags(p: argparse.ArgumentParser, multi: bool = False) -> None:
    p.add_argument("--config", help="JSON file of run settings; flags given on the command line override it")
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--balance", type=_int_list, help="layers per device, e.g. 1,2,1,2")
    if multi:
        p.add_argument("--chunks", type=_int_list, help="chunk counts to sweep, e.g. 1,2,3,4")
        p.add_argument("--strategy", type=_str_list, help="split strategies to sweep")
        p.add_argument("--no-single", action="store_true", help="leave out the single-device baseline row")
    else:
        p.add_argument("--mode", choices=["single", "pipeline"])
        p.add_argument("--chunks", type=int)
        p.add_argument("--strategy", choices=list(STRATEGIES))
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--rebuild-delay", type=float, dest="rebuild_delay", help="seconds slept per sub-graph rebuild")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pipegat", description="Pipeline-parallel graph attention training.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _run_flags(sub.add_parser("train", help="train one configuration and write report.json and epochs.csv"))
    _run_flags(sub.add_parser("benchmark", help="run a chunks x strategy grid and write benchmark.csv"), multi=True)

    cg = sub.add_parser("check-grad", help="finite-difference check of hand-written gradients")
    cg.add_argument("--layer", choices=["gat", "linear", "model"], default="gat")
    cg.add_argument("--seed", type=int, default=0)
    cg.add_argument("--eps", type=float, default=1e-5)

    ins = sub.add_parser("inspect", help="print dataset statistics and split sizes")
    ins.add_argument("--dataset", required=True)
    return ap


def _base_settings(args) -> dict:
    if not args.config:
        return {}
    try:
        d = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(d, dict):
        raise UsageError("config file must hold a JSON object")
    return d


def _overrides(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _run_config(args) -> RunConfig:
    d = _base_settings(args)
    d.update(_overrides(args, [f.name for f in fields(RunConfig)]))
    if d.get("mode") is None and d.get("chunks", 1) > 1:
        d["mode"] = "pipeline"
    if not d.get("dataset"):
        raise UsageError("a dataset is required (--dataset or the config file)")
    return _config(d)


def _config(d: dict) -> RunConfig:
    try:
        return RunConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid run settings: {exc}") from None


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if cfg.out is None:
        cfg.out = "runs/train"
    ds = load_dataset(cfg.dataset)
    if cfg.chunks > ds.n:
        raise UsageError(f"chunks={cfg.chunks} exceeds the {ds.n} nodes of {cfg.dataset}")
    report = train(cfg, ds)
    print(f"{ds.name}: mode={cfg.mode} chunks={cfg.chunks} epochs={cfg.epochs} seed={cfg.seed}")
    print(f"final train loss {report.records[-1].train_loss:.4f}, val acc {report.val_acc:.4f}, test acc {report.test_acc:.4f}")
    print(f"epoch 1 {report.first_epoch_s:.3f} s, mean later epoch {report.mean_epoch_s:.4f} s")
    print(f"report written to {cfg.out}")
    return 0


def cmd_benchmark(args) -> int:
    base = _base_settings(args)
    base.update(_overrides(args, ["dataset", "epochs", "seed", "balance", "lr", "weight_decay", "rebuild_delay"]))
    if not base.get("dataset"):
        raise UsageError("a dataset is required (--dataset or the config file)")
    chunks = args.chunks or [1, 2, 3, 4]
    strategies = args.strategy or ["sequential"]
    out = args.out or base.pop("out", None) or "runs/benchmark"
    base.pop("out", None)
    grid = [] if args.no_single else [_config({**base, "mode": "single", "chunks": 1})]
    grid += [
        _config({**base, "mode": "pipeline", "chunks": c, "strategy": s}) for s in strategies for c in chunks
    ]
    ds = load_dataset(base["dataset"])
    rows = benchmark(grid, out, ds)
    print(f"{'mode':9} {'chunks':>6} {'strategy':16} {'avg_epoch_s':>11} {'val_acc':>8} {'test_acc':>8} {'retention':>9}")
    for r in rows:
        if r["error"]:
            print(f"{r['framework_mode']:9} {r['chunks']:>6} {r['strategy']:16} failed: {r['error']}")
            continue
        print(
            f"{r['framework_mode']:9} {r['chunks']:>6} {r['strategy']:16} {r['avg_epoch_s']:>11.4f} "
            f"{r['val_acc']:>8.4f} {r['test_acc']:>8.4f} {r['edge_retention']:>9.4f}"
        )
    print(f"tables written to {out}")
    return 2 if all(r["error"] for r in rows) else 0


def _random_graph(rng, n: int, m: int):
    u, v = rng.integers(0, n, m), rng.integers(0, n, m)
    return from_edges(n, u, v)


def grad_error(layer: str, seed: int = 0, eps: float = 1e-5) -> float:
    """Worst relative gradient error for a small random instance of ``layer``."""
    rng = np.random.default_rng(seed)
    if layer == "gat":
        g = _random_graph(rng, 9, 20)
        x = rng.normal(size=(9, 5))
        worst = 0.0
        for mode in ("concat", "mean"):
            p = GatLayerParams.init(rng, 5, 3, 2, bias=True, mode=mode, attn_dropout_p=0.3)
            proj = rng.normal(size=(9, p.out_dim))
            drop = RngStream(seed, 1)

            def loss():
                for q in p.params:
                    q.zero_grad()
                out, cache = gat_forward(g, x, p, training=True, rng=drop)
                gat_backward(cache, proj, p)
                return float(np.sum(out * proj))

            worst = max(worst, grad_check(loss, p.params, eps=eps))
        return worst
    if layer == "linear":
        lin = Linear(6, 4, rng)
        x = rng.normal(size=(7, 6))
        proj = rng.normal(size=(7, 4))
        batch = BatchTuple(np.arange(7), x)

        def loss():
            for q in lin.params:
                q.zero_grad()
            out, cache = lin.forward(batch, None)
            lin.backward(cache, proj)
            return float(np.sum(out.feats * proj))

        return grad_check(loss, lin.params, eps=eps)
    if layer == "model":
        n = 24
        g = _random_graph(rng, n, 50)
        x = rng.normal(size=(n, 6))
        labels = rng.integers(0, 3, n)
        mask = rng.random(n) < 0.5
        mask[:2] = True
        seq = build_gat_model(g, 6, 3, hidden=3, heads=2, out_heads=2, dropout=0.3, attn_dropout=0.3, seed=seed)
        batch = BatchTuple(np.arange(n), x)
        plan = SplitPlan(2)
        with GPipe(seq, (1, 2, 1, 2), 2) as pipe:

            def loss():
                seq.zero_grad()
                return pipe.step(batch, labels, mask, training=True, seed=seed, step=1, plan=plan).loss

            return grad_check(loss, seq.params, eps=eps)
    raise UsageError(f"unknown layer {layer!r}")


def cmd_check_grad(args) -> int:
    err = grad_error(args.layer, args.seed, args.eps)
    ok = err < GRAD_TOL
    print(f"check-grad {args.layer} seed={args.seed}: max rel err {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRAD_TOL:g})")
    return 0 if ok else 2


def cmd_inspect(args) -> int:
    ds = load_dataset(args.dataset)
    s = ds.summary()
    print(f"dataset {s['name']}")
    print(f"n={s['num_nodes']}")
    print(f"m(undirected)={s['edge_records']}  (edge list lines; {s['num_edges']} distinct non-loop pairs)")
    print(f"C={s['num_classes']}")
    print(f"d={s['num_features']}")
    print(f"splits: train={s['train']} val={s['val']} test={s['test']}")
    return 0


COMMANDS = {"train": cmd_train, "benchmark": cmd_benchmark, "check-grad": cmd_check_grad, "inspect": cmd_inspect}


def main(argv=None) -> int:
    level = os.environ.get("PIPEGAT_LOG", "WARNING").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - mapped to exit status 2
        log.debug("run failed", exc_info=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
