"""Graph attention layers and the sequential GAT model.

The attention logit for an entry ``j -> i`` (row ``i``, column ``j``) of head
``k`` is ``LeakyReLU(<a_src[k], z_i> + <a_dst[k], z_j>)`` with ``z = x @ W``
sliced per head. Logits are softmax-normalised over each row, optionally
dropped out, and used to average the neighbours' ``z``.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .batching import BatchTuple
from .graph import Graph, induced_subgraph
from .nn import (
    ELU,
    Dropout,
    ForwardContext,
    Layer,
    LeakyReLU,
    LogSoftmax,
    Param,
    RngStream,
    ShapeError,
    dropout,
    glorot_uniform,
    leaky_relu,
    leaky_relu_backward,
)


@dataclass(eq=False)
class GatLayerParams:
    W: Param
    attn_src: Param
    attn_dst: Param
    heads: int
    d_head: int
    mode: str = "concat"
    attn_dropout_p: float = 0.6
    leaky_slope: float = 0.2
    bias: Param | None = None

    def __post_init__(self):
        if self.mode not in ("concat", "mean"):
            raise ValueError(f"mode must be 'concat' or 'mean', got {self.mode!r}")
        if not 0.0 <= self.attn_dropout_p < 1.0:
            raise ValueError("attention dropout must lie in [0, 1)")
        K, dh = self.heads, self.d_head
        if self.W.value.ndim != 2 or self.W.value.shape[1] != K * dh:
            raise ShapeError(f"W must have {K * dh} columns")
        if self.attn_src.value.shape != (K, dh) or self.attn_dst.value.shape != (K, dh):
            raise ShapeError(f"attention vectors must have shape ({K}, {dh})")
        if self.bias is not None and self.bias.value.shape != (1, self.out_dim):
            raise ShapeError(f"bias must have shape (1, {self.out_dim})")

    @property
    def in_dim(self) -> int:
        return int(self.W.value.shape[0])

    @property
    def out_dim(self) -> int:
        return self.heads * self.d_head if self.mode == "concat" else self.d_head

    @property
    def params(self) -> list[Param]:
        ps = [self.W, self.attn_src, self.attn_dst]
        return ps + [self.bias] if self.bias is not None else ps

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_head: int, heads: int, bias: bool = False, **kw):
        return cls(
            W=Param(glorot_uniform(rng, d_in, heads * d_head), name="W"),
            attn_src=Param(glorot_uniform(rng, heads, d_head), name="attn_src"),
            attn_dst=Param(glorot_uniform(rng, heads, d_head), name="attn_dst"),
            heads=heads,
            d_head=d_head,
            bias=Param(np.zeros((1, heads * d_head if kw.get("mode", "concat") == "concat" else d_head)), name="b")
            if bias
            else None,
            **kw,
        )


@dataclass(eq=False)
class GatCache:
    graph: Graph
    x: np.ndarray
    z: np.ndarray
    pre: np.ndarray
    alpha: np.ndarray
    alpha_drop: np.ndarray
    drop_mask: np.ndarray


def _row_sum(g: Graph, vals: np.ndarray) -> np.ndarray:
    return np.add.reduceat(vals, g.row_ptr[:-1], axis=0)


def _col_sum(g: Graph, vals: np.ndarray) -> np.ndarray:
    order, col_ptr = g.by_col
    return np.add.reduceat(vals[order], col_ptr[:-1], axis=0)


def gat_forward(g: Graph, feats: np.ndarray, p: GatLayerParams, training: bool = False, rng: RngStream | None = None):
    """Multi-head graph attention over ``g``. Returns ``(out, cache)``."""
    n, K, dh = g.n, p.heads, p.d_head
    if feats.ndim != 2 or feats.shape[0] != n:
        raise ShapeError(f"feats has {feats.shape[0]} rows, graph has {n} nodes")
    if feats.shape[1] != p.in_dim:
        raise ShapeError(f"feats has {feats.shape[1]} columns, W expects {p.in_dim}")
    assert n == 0 or np.all(np.diff(g.row_ptr) > 0), "every node needs at least one in-neighbour"

    z = (feats @ p.W.value).reshape(n, K, dh)
    s_recv = np.einsum("nkd,kd->nk", z, p.attn_src.value)
    s_send = np.einsum("nkd,kd->nk", z, p.attn_dst.value)
    rows, cols = g.rows, g.col_idx
    pre = s_recv[rows] + s_send[cols]
    e = leaky_relu(pre, p.leaky_slope)
    e_max = np.maximum.reduceat(e, g.row_ptr[:-1], axis=0)
    ex = np.exp(e - e_max[rows])
    alpha = ex / _row_sum(g, ex)[rows]
    alpha_drop, drop_mask = dropout(alpha, p.attn_dropout_p, rng, training)

    h = _row_sum(g, alpha_drop[:, :, None] * z[cols])
    out = h.reshape(n, K * dh) if p.mode == "concat" else h.mean(axis=1)
    if p.bias is not None:
        out = out + p.bias.value
    return out, GatCache(g, feats, z, pre, alpha, alpha_drop, drop_mask)


def gat_backward(cache: GatCache, d_out: np.ndarray, p: GatLayerParams, input_grad: bool = True):
    """Accumulate parameter gradients into ``p`` and return the gradient w.r.t. feats
    (``None`` when ``input_grad`` is false)."""
    g, z = cache.graph, cache.z
    n, K, dh = z.shape
    if d_out.shape != (n, p.out_dim):
        raise ShapeError(f"d_out has shape {d_out.shape}, expected {(n, p.out_dim)}")
    if p.bias is not None:
        p.bias.grad += d_out.sum(axis=0, keepdims=True)
    if p.mode == "concat":
        dh3 = d_out.reshape(n, K, dh)
    else:
        dh3 = np.broadcast_to(d_out[:, None, :] / K, (n, K, dh))
    rows, cols = g.rows, g.col_idx

    d_recv_rows = dh3[rows]
    d_alpha = np.einsum("ekd,ekd->ek", d_recv_rows, z[cols])
    if cache.drop_mask is not None:
        d_alpha *= cache.drop_mask
    dz = _col_sum(g, cache.alpha_drop[:, :, None] * d_recv_rows)

    alpha = cache.alpha
    de = alpha * (d_alpha - _row_sum(g, alpha * d_alpha)[rows])
    dpre = leaky_relu_backward(cache.pre, de, p.leaky_slope)
    ds_recv = _row_sum(g, dpre)
    ds_send = _col_sum(g, dpre)

    a_src, a_dst = p.attn_src.value, p.attn_dst.value
    dz += ds_recv[:, :, None] * a_src[None] + ds_send[:, :, None] * a_dst[None]
    p.attn_src.grad += np.einsum("nk,nkd->kd", ds_recv, z)
    p.attn_dst.grad += np.einsum("nk,nkd->kd", ds_send, z)

    dz = dz.reshape(n, K * dh)
    p.W.grad += cache.x.T @ dz
    return dz @ p.W.value.T if input_grad else None


class RebuildStats:
    """Thread-safe tally of sub-graph rebuilds."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0
        self.seconds = 0.0

    def record(self, seconds: float) -> None:
        with self._lock:
            self.count += 1
            self.seconds += seconds

    def as_dict(self) -> dict:
        return {"count": self.count, "seconds": self.seconds}


class GATLayer(Layer):
    """Graph attention as a sequence module.

    Holds the root graph. With ``ctx.rebuild`` the layer cuts the induced
    sub-graph of the incoming node ids before attending; otherwise the batch
    must cover the whole root graph and the graph is used as is.
    """

    graph_layer = True

    def __init__(self, graph: Graph, params: GatLayerParams, rebuild_delay: float = 0.0):
        self.graph = graph
        self.p = params
        self.rebuild_delay = rebuild_delay

    @property
    def params(self):
        return self.p.params

    def graph_for(self, batch: BatchTuple, ctx: ForwardContext) -> Graph:
        if not ctx.rebuild:
            if len(batch) != self.graph.n:
                raise ValueError("a partial batch needs sub-graph rebuilding")
            return self.graph
        t0 = time.perf_counter()
        sub = induced_subgraph(self.graph, batch.node_ids)
        if self.rebuild_delay:
            time.sleep(self.rebuild_delay)
        if ctx.stats is not None:
            ctx.stats.record(time.perf_counter() - t0)
        return sub

    def forward(self, batch, ctx):
        g = self.graph_for(batch, ctx)
        out, cache = gat_forward(g, batch.feats, self.p, ctx.training, ctx.rng(self.index))
        return batch.with_feats(out), cache

    def backward(self, cache, d_feats):
        return gat_backward(cache, d_feats, self.p, self.input_grad)

    def __repr__(self):
        p = self.p
        return f"GAT({p.in_dim}->{p.heads}x{p.d_head}, {p.mode})"


@dataclass(eq=False)
class LayerSeq:
    """Ordered modules sharing one root graph."""

    layers: list
    graph: Graph | None = None
    rebuilds_per_pass: int = field(init=False, default=0)

    def __post_init__(self):
        seen_params = False
        for i, layer in enumerate(self.layers):
            layer.index = i
            layer.input_grad = seen_params
            seen_params = seen_params or bool(layer.params)
        self.rebuilds_per_pass = sum(isinstance(layer, GATLayer) for layer in self.layers)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    @property
    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params]

    def load_state(self, values) -> None:
        for p, v in zip(self.params, values, strict=True):
            p.value[...] = v


def build_gat_model(
    graph: Graph,
    d_in: int,
    n_classes: int,
    hidden: int = 8,
    heads: int = 8,
    out_heads: int = 8,
    dropout: float = 0.6,
    attn_dropout: float = 0.6,
    activation: str = "elu",
    leaky_slope: float = 0.2,
    bias: bool = False,
    seed: int = 0,
    rebuild_delay: float = 0.0,
) -> LayerSeq:
    """Dropout -> GAT(concat) -> activation -> Dropout -> GAT(mean) -> LogSoftmax."""
    rng = np.random.default_rng(seed)
    acts = {"elu": ELU, "leaky_relu": lambda: LeakyReLU(leaky_slope)}
    if activation not in acts:
        raise ValueError(f"activation must be one of {sorted(acts)}")
    first = GatLayerParams.init(
        rng, d_in, hidden, heads, bias=bias, mode="concat", attn_dropout_p=attn_dropout, leaky_slope=leaky_slope
    )
    second = GatLayerParams.init(
        rng, heads * hidden, n_classes, out_heads, bias=bias, mode="mean", attn_dropout_p=attn_dropout,
        leaky_slope=leaky_slope,
    )
    layers = [
        Dropout(dropout),
        GATLayer(graph, first, rebuild_delay),
        acts[activation](),
        Dropout(dropout),
        GATLayer(graph, second, rebuild_delay),
        LogSoftmax(),
    ]
    return LayerSeq(layers, graph)


def build_mlp(d_in: int, hidden: list[int], d_out: int, seed: int = 0, log_softmax: bool = True) -> LayerSeq:
    """Graph-free stack of Linear/ELU layers, optionally ending in LogSoftmax."""
    from .nn import Linear

    rng = np.random.default_rng(seed)
    dims = [d_in] + list(hidden) + [d_out]
    layers: list = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers += [Linear(a, b, rng), ELU()]
    layers.pop()
    if log_softmax:
        layers.append(LogSoftmax())
    return LayerSeq(layers)


def seq_forward(seq: LayerSeq, batch: BatchTuple, ctx: ForwardContext, layers: range | None = None):
    """Run ``batch`` through ``seq`` (or the ``layers`` slice of it).

    Returns the output BatchTuple and the per-layer caches.
    """
    caches = []
    for i in layers if layers is not None else range(len(seq)):
        batch, cache = seq[i].forward(batch, ctx)
        caches.append(cache)
    return batch, caches


def seq_backward(seq: LayerSeq, caches: list, d_feats: np.ndarray, layers: range | None = None) -> np.ndarray:
    idx = list(layers if layers is not None else range(len(seq)))
    for i, cache in zip(reversed(idx), reversed(caches)):
        if d_feats is None:
            break
        d_feats = seq[i].backward(cache, d_feats)
    return d_feats


def predict_log_proba(seq: LayerSeq, feats: np.ndarray) -> np.ndarray:
    """Eval-mode full-graph forward."""
    n = feats.shape[0]
    out, _ = seq_forward(seq, BatchTuple(np.arange(n), feats), ForwardContext(training=False, rebuild=False))
    return out.feats
