"""GPipe-style pipeline executor over simulated devices.

A :class:`LayerSeq` is cut into contiguous partitions according to a balance
array. Each partition is served by one worker thread that owns the
partition's parameters. A training step splits the batch into micro-batches,
streams all of them forward through the partitions (fill), computes the
weighted loss, then streams gradients back in reverse micro-batch order
(drain). Gradients from every micro-batch accumulate into ``Param.grad``;
the optimizer is never called from inside a step.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .batching import BatchTuple, SplitPlan, split_mask, split_microbatches
from .gat import LayerSeq, RebuildStats
from .nn import ForwardContext, Param, masked_nll_loss


class PipelineError(RuntimeError):
    """A partition worker failed during a step."""

    def __init__(self, device: int, exc: BaseException):
        super().__init__(f"device {device}: {type(exc).__name__}: {exc}")
        self.device = device
        self.__cause__ = exc


@dataclass(frozen=True)
class PipelineConfig:
    balance: tuple[int, ...]
    chunks: int = 1

    def __post_init__(self):
        object.__setattr__(self, "balance", tuple(int(b) for b in self.balance))
        if not self.balance or any(b < 1 for b in self.balance):
            raise ValueError(f"every balance entry must be >= 1, got {list(self.balance)}")
        if self.chunks < 1:
            raise ValueError("chunks must be at least 1")

    @property
    def devices(self) -> int:
        return len(self.balance)


@dataclass(eq=False)
class Partition:
    device: int
    layers: range
    params: list[Param]


def partition_model(seq: LayerSeq, cfg: PipelineConfig) -> list[Partition]:
    if sum(cfg.balance) != len(seq):
        raise ValueError(f"balance {list(cfg.balance)} sums to {sum(cfg.balance)}, model has {len(seq)} layers")
    parts, start = [], 0
    for device, size in enumerate(cfg.balance):
        layers = range(start, start + size)
        parts.append(Partition(device, layers, [p for i in layers for p in seq[i].params]))
        start += size
    return parts


@dataclass(frozen=True)
class Event:
    kind: str  # "fwd" | "bwd" | "rebuild"
    microbatch: int
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class Timeline:
    """Per-device wall-clock events of one step.

    ``rebuild`` events nest inside the ``fwd`` event that triggered them.
    """

    devices: list[list[Event]]

    def compute_events(self, device: int) -> list[Event]:
        return [e for e in self.devices[device] if e.kind != "rebuild"]

    def check(self) -> None:
        """Assert the scheduling partial order."""
        for evs in map(self.compute_events, range(len(self.devices))):
            for a, b in zip(evs, evs[1:]):
                assert a.end <= b.start, "overlapping events on one device"
        done = {}
        for d in range(len(self.devices)):
            for e in self.compute_events(d):
                done[(e.kind, d, e.microbatch)] = e
        for (kind, d, mb), e in done.items():
            if kind == "fwd" and d > 0:
                assert done[("fwd", d - 1, mb)].end <= e.start, "fwd ran before upstream fwd"
            if kind == "bwd" and d + 1 < len(self.devices):
                assert done[("bwd", d + 1, mb)].end <= e.start, "bwd ran before downstream bwd"


def bubble_stats(t: Timeline) -> dict:
    """Idle share of each device.

    The measured figures use raw wall-clock stamps. The headline figures
    replay the recorded per-device event order with the measured durations
    under GPipe dependencies, which strips thread hand-off latency and the
    coordinator's loss computation; a single device therefore has no bubble.
    """
    events = [t.compute_events(d) for d in range(len(t.devices))]
    if not any(events):
        raise ValueError("empty timeline")
    starts = [e.start for evs in events for e in evs]
    ends = [e.end for evs in events for e in evs]
    measured = max(ends) - min(starts)

    D = len(events)
    finish: dict = {}
    free = [0.0] * D
    pending = [list(evs) for evs in events]
    # replay until every event is placed; each pass places at least one event
    while any(pending):
        progressed = False
        for d in range(D):
            while pending[d]:
                e = pending[d][0]
                if e.kind == "fwd":
                    deps = [("fwd", d - 1, e.microbatch)] if d > 0 else []
                elif d + 1 < D:
                    deps = [("bwd", d + 1, e.microbatch)]
                else:
                    deps = [("fwd", d, m.microbatch) for m in events[d] if m.kind == "fwd"]
                if any(k not in finish for k in deps):
                    break
                begin = max([free[d]] + [finish[k] for k in deps])
                free[d] = begin + e.duration
                finish[(e.kind, d, e.microbatch)] = free[d]
                pending[d].pop(0)
                progressed = True
        if not progressed:
            raise ValueError("timeline violates pipeline dependencies")
    makespan = max(free)
    busy = [sum(e.duration for e in evs) for evs in events]
    return {
        "makespan": makespan,
        "bubble_fraction": [1.0 - b / makespan if makespan > 0 else 0.0 for b in busy],
        "measured_makespan": measured,
        "measured_bubble_fraction": [1.0 - b / measured if measured > 0 else 0.0 for b in busy],
    }


@dataclass
class StepResult:
    loss: float
    timeline: Timeline
    rebuilds: dict
    microbatch_sizes: list[int] = field(default_factory=list)


class _DeviceRecorder:
    """Routes rebuild timings of one worker into the step tally and its timeline."""

    def __init__(self, stats: RebuildStats, events: list, mb: int):
        self.stats, self.events, self.mb = stats, events, mb

    def record(self, seconds: float) -> None:
        self.stats.record(seconds)
        end = time.perf_counter()
        self.events.append(Event("rebuild", self.mb, end - seconds, end))


_STOP = object()


class _Worker(threading.Thread):
    def __init__(self, seq: LayerSeq, part: Partition, inbox: queue.Queue, pipe: "GPipe"):
        super().__init__(name=f"pipegat-device-{part.device}", daemon=True)
        self.seq, self.part, self.inbox, self.pipe = seq, part, inbox, pipe

    def run(self):
        caches: dict[int, list] = {}
        layers = list(self.part.layers)
        while True:
            msg = self.inbox.get()
            if msg is _STOP:
                return
            kind, mb, payload, ctx, events = msg
            try:
                t0 = time.perf_counter()
                if kind == "fwd":
                    ctx = replace(ctx, stats=_DeviceRecorder(self.pipe._stats, events, mb))
                    out = payload
                    cache = []
                    for i in layers:
                        out, c = self.seq[i].forward(out, ctx)
                        cache.append(c)
                    caches[mb] = cache
                else:
                    out = payload
                    for i, c in zip(reversed(layers), reversed(caches.pop(mb))):
                        if out is None:
                            break
                        out = self.seq[i].backward(c, out)
                events.append(Event(kind, mb, t0, time.perf_counter()))
                self.pipe._send(self.part.device, kind, mb, out, ctx)
            except BaseException as exc:  # noqa: BLE001 - forwarded to the coordinator
                caches.clear()
                self.pipe._results.put(("error", self.part.device, exc))


class GPipe:
    """Pipeline-parallel wrapper around a layer sequence.

    Use as a context manager, or call :meth:`close` to stop the workers.
    Parameters may be read or updated only between calls to :meth:`step`.
    """

    def __init__(self, seq: LayerSeq, balance, chunks: int = 1):
        self.seq = seq
        self.config = PipelineConfig(tuple(balance), chunks)
        self.partitions = partition_model(seq, self.config)
        self._inboxes = [queue.Queue() for _ in self.partitions]
        self._results: queue.Queue = queue.Queue()
        self._stats = RebuildStats()
        self._events: list[list[Event]] = [[] for _ in self.partitions]
        self._workers = [_Worker(seq, p, q, self) for p, q in zip(self.partitions, self._inboxes)]
        self._lock = threading.Lock()
        self._closed = False
        for w in self._workers:
            w.start()

    @property
    def chunks(self) -> int:
        return self.config.chunks

    def _send(self, device: int, kind: str, mb: int, payload, ctx) -> None:
        nxt = device + 1 if kind == "fwd" else device - 1
        if 0 <= nxt < len(self.partitions):
            self._inboxes[nxt].put((kind, mb, payload, ctx, self._events[nxt]))
        else:
            self._results.put((kind, mb, payload))

    def _collect(self, kind: str, count: int) -> dict:
        got = {}
        while len(got) < count:
            msg = self._results.get()
            if msg[0] == "error":
                self.close()
                raise PipelineError(msg[1], msg[2])
            _, mb, payload = msg
            if msg[0] != kind:
                raise RuntimeError(f"unexpected {msg[0]} message during {kind} phase")
            got[mb] = payload
        return got

    def step(
        self,
        batch: BatchTuple,
        labels: np.ndarray,
        mask: np.ndarray,
        *,
        training: bool = True,
        seed: int = 0,
        step: int = 0,
        plan: SplitPlan | None = None,
    ) -> StepResult:
        """Forward and backward one mini-batch; gradients accumulate into ``Param.grad``.

        ``labels`` and ``mask`` are indexed by global node id.
        """
        if self._closed:
            raise RuntimeError("pipeline is closed")
        plan = plan or SplitPlan(self.chunks)
        if plan.chunks != self.chunks:
            raise ValueError("split plan and pipeline disagree on chunks")
        with self._lock:
            self._stats = RebuildStats()
            self._events = [[] for _ in self.partitions]
            mbs = split_microbatches(batch, plan)
            for k, mb in enumerate(mbs):
                ctx = ForwardContext(training=training, seed=seed, step=step, microbatch=k, rebuild=True)
                self._inboxes[0].put(("fwd", k, mb, ctx, self._events[0]))
            outputs = self._collect("fwd", len(mbs))

            loss = 0.0
            grads = {}
            for k, mb in enumerate(mbs):
                out = outputs[k]
                local_mask, local_labels, weight = split_mask(mask, labels, mb.node_ids)
                if weight > 0.0:
                    mb_loss, dlogp = masked_nll_loss(out.feats, local_labels, local_mask)
                    loss += weight * mb_loss
                    grads[k] = dlogp * weight
                else:
                    grads[k] = np.zeros_like(out.feats)
            for k in reversed(range(len(mbs))):
                self._inboxes[-1].put(("bwd", k, grads[k], None, self._events[-1]))
            self._collect("bwd", len(mbs))
            return StepResult(
                loss=float(loss),
                timeline=Timeline(self._events),
                rebuilds=self._stats.as_dict(),
                microbatch_sizes=[len(mb) for mb in mbs],
            )

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            for q in self._inboxes:
                q.put(_STOP)
            for w in self._workers:
                w.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def pipeline_step(
    seq: LayerSeq,
    cfg: PipelineConfig,
    batch: BatchTuple,
    labels: np.ndarray,
    mask: np.ndarray,
    plan: SplitPlan | None = None,
    training: bool = True,
    seed: int = 0,
    step: int = 0,
) -> StepResult:
    """One-shot convenience wrapper: start a pipeline, run one step, stop it."""
    with GPipe(seq, cfg.balance, cfg.chunks) as pipe:
        return pipe.step(batch, labels, mask, training=training, seed=seed, step=step, plan=plan)


def full_batch_step(
    seq: LayerSeq,
    batch: BatchTuple,
    labels: np.ndarray,
    mask: np.ndarray,
    training: bool = True,
    seed: int = 0,
    step: int = 0,
) -> float:
    """Non-pipelined forward/backward on the root graph, same op order as one chunk."""
    from .gat import seq_backward, seq_forward

    ctx = ForwardContext(training=training, seed=seed, step=step, microbatch=0, rebuild=False)
    out, caches = seq_forward(seq, batch, ctx)
    local_mask, local_labels, weight = split_mask(mask, labels, batch.node_ids)
    mb_loss, dlogp = masked_nll_loss(out.feats, local_labels, local_mask)
    seq_backward(seq, caches, dlogp * weight)
    return float(weight * mb_loss)
