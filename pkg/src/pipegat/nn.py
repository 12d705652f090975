"""Dense float64 kernels, non-graph layers, loss, optimizer and gradient checking.

Every layer carries a hand-written backward pass. Layers exchange
:class:`~pipegat.batching.BatchTuple` values so graph and non-graph layers
can be chained in one sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .batching import BatchTuple


class ShapeError(ValueError):
    pass


# --------------------------------------------------------------------------- rng


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream.

    Draws depend only on ``(seed, stream, counter)``: the Philox generator is
    keyed by ``(seed, stream)`` and started at ``counter``.
    """

    seed: int
    stream: int = 0
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=self.counter))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream, self.counter)


def stream_id(step: int, layer: int, microbatch: int = 0) -> int:
    """Pack ``(step, layer, microbatch)`` into one 64-bit stream id."""
    if not (0 <= layer < 1 << 16 and 0 <= microbatch < 1 << 16 and 0 <= step < 1 << 32):
        raise ValueError("stream coordinates out of range")
    return (step << 32) | (layer << 16) | microbatch


# ----------------------------------------------------------------------- kernels


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def dropout(x: np.ndarray, p: float, rng: RngStream | None, training: bool):
    """Inverted dropout. Returns ``(y, mask)`` where ``mask`` already holds the
    ``1/(1-p)`` scale, so the backward pass is ``dx = dy * mask``.

    Outside training (or with ``p == 0``) ``y`` is ``x`` itself and ``mask`` is
    ``None``, standing for all ones.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    keep = rng.generator().random(x.shape, dtype=np.float32) >= p
    mask = keep / (1.0 - p)
    return x * mask, mask


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(x: np.ndarray, dy: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, dy, slope * dy)


def elu(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_backward(x: np.ndarray, dy: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return np.where(x > 0, dy, dy * alpha * np.exp(np.minimum(x, 0.0)))


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy - np.exp(y) * dy.sum(axis=1, keepdims=True)


def masked_nll_loss(logp: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean negative log-likelihood over the masked rows.

    Returns ``(loss, dlogp)``; ``dlogp`` is zero outside the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (logp.shape[0],) or labels.shape != mask.shape:
        raise ShapeError("labels and mask must have one entry per row")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("masked_nll_loss needs a nonempty mask")
    picked = logp[idx, labels[idx]]
    loss = -picked.sum() / idx.size
    dlogp = np.zeros_like(logp)
    dlogp[idx, labels[idx]] = -1.0 / idx.size
    return float(loss), dlogp


# ------------------------------------------------------------------ parameters


@dataclass(eq=False)
class Param:
    value: np.ndarray
    grad: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(
    params: Sequence[Param],
    t: int,
    lr: float = 0.005,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 5e-4,
    state: AdamState | None = None,
) -> AdamState:
    """One in-place Adam update with bias correction.

    L2 weight decay is folded into the gradient (``g + wd * w``) before the
    moment updates. Pass the returned state back in on the next call.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    if state is None or not state.m:
        state = AdamState([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad + weight_decay * p.value if weight_decay else p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    """Stateful wrapper over :func:`adam_step`."""

    def __init__(self, params, lr=0.005, betas=(0.9, 0.999), eps=1e-8, weight_decay=5e-4):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.t = 0
        self.state = None

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        self.state = adam_step(
            self.params, self.t, self.lr, self.betas[0], self.betas[1], self.eps, self.weight_decay, self.state
        )


# ------------------------------------------------------------------ grad check


class NondeterministicForward(RuntimeError):
    pass


def grad_check(
    loss_and_grad: Callable[[], float],
    params: Sequence[Param],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grad`` must zero the gradients, run forward and backward, and
    return the scalar loss. The error for one parameter is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)`` over the
    checked entries; the worst parameter's error is returned.
    ``max_entries`` caps the number of entries probed per parameter.
    """
    base = loss_and_grad()
    if loss_and_grad() != base:
        raise NondeterministicForward("two evaluations at the same point disagree")
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(idx.size)
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = loss_and_grad()
            flat[i] = old - eps
            fm = loss_and_grad()
            flat[i] = old
            num[k] = (fp - fm) / (2 * eps)
        an = a.reshape(-1)[idx]
        scale = max(np.linalg.norm(an), np.linalg.norm(num))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(an - num) / scale))
    loss_and_grad()  # leave grads consistent with the unperturbed point
    return worst


# ---------------------------------------------------------------------- layers


@dataclass
class ForwardContext:
    """Per-micro-batch settings handed to every layer's forward."""

    training: bool = False
    seed: int = 0
    step: int = 0
    microbatch: int = 0
    rebuild: bool = True
    stats: object = None

    def rng(self, layer_index: int) -> RngStream:
        return RngStream(self.seed, stream_id(self.step, layer_index, self.microbatch))


class Layer:
    """A module of a sequential model mapping a BatchTuple to a BatchTuple.

    ``backward`` accumulates parameter gradients and returns the gradient
    w.r.t. the input features, or ``None`` when ``input_grad`` is off (no
    upstream layer has parameters).
    """

    index: int = 0
    input_grad: bool = True

    @property
    def params(self) -> list[Param]:
        return []

    def forward(self, batch: BatchTuple, ctx: ForwardContext):
        raise NotImplementedError

    def backward(self, cache, d_feats: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return type(self).__name__ + "()"


class Dropout(Layer):
    def __init__(self, p: float = 0.6):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p

    def forward(self, batch, ctx):
        y, mask = dropout(batch.feats, self.p, ctx.rng(self.index), ctx.training)
        return batch.with_feats(y), mask

    def backward(self, mask, d_feats):
        return d_feats if mask is None else d_feats * mask

    def __repr__(self):
        return f"Dropout(p={self.p})"


class ELU(Layer):
    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def forward(self, batch, ctx):
        return batch.with_feats(elu(batch.feats, self.alpha)), batch.feats

    def backward(self, x, d_feats):
        return elu_backward(x, d_feats, self.alpha)


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.2):
        self.slope = slope

    def forward(self, batch, ctx):
        return batch.with_feats(leaky_relu(batch.feats, self.slope)), batch.feats

    def backward(self, x, d_feats):
        return leaky_relu_backward(x, d_feats, self.slope)


class ReLU(Layer):
    def forward(self, batch, ctx):
        return batch.with_feats(np.maximum(batch.feats, 0.0)), batch.feats

    def backward(self, x, d_feats):
        return np.where(x > 0, d_feats, 0.0)


class LogSoftmax(Layer):
    def forward(self, batch, ctx):
        y = log_softmax_rows(batch.feats)
        return batch.with_feats(y), y

    def backward(self, y, d_feats):
        return log_softmax_backward(y, d_feats)


class Linear(Layer):
    """Dense ``x @ W + b`` applied row-wise; ignores the graph."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = Param(glorot_uniform(rng, d_in, d_out), name="W")
        self.b = Param(np.zeros((1, d_out)), name="b") if bias else None

    @property
    def params(self):
        return [self.W] + ([self.b] if self.b is not None else [])

    def forward(self, batch, ctx):
        y = matmul(batch.feats, self.W.value)
        if self.b is not None:
            y = y + self.b.value
        return batch.with_feats(y), batch.feats

    def backward(self, x, d_feats):
        self.W.grad += x.T @ d_feats
        if self.b is not None:
            self.b.grad += d_feats.sum(axis=0, keepdims=True)
        return d_feats @ self.W.value.T if self.input_grad else None

    def __repr__(self):
        return f"Linear({self.W.value.shape[0]}, {self.W.value.shape[1]})"
