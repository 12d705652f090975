import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pipegat.batching import BatchTuple
from pipegat.nn import (
    ELU,
    Adam,
    Dropout,
    ForwardContext,
    Linear,
    LogSoftmax,
    NondeterministicForward,
    Param,
    RngStream,
    ShapeError,
    adam_step,
    dropout,
    grad_check,
    leaky_relu,
    log_softmax_rows,
    masked_nll_loss,
    matmul,
    stream_id,
)


def test_matmul_small():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
    assert out.tolist() == [[17.0], [39.0]]
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_leaky_relu_values():
    assert np.allclose(leaky_relu(np.array([-1.0, 2.0]), 0.2), [-0.2, 2.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 9)), elements=st.floats(-300, 300)))
def test_log_softmax_rows_normalise(x):
    lp = log_softmax_rows(x)
    assert np.all(np.abs(np.exp(lp).sum(axis=1) - 1.0) < 1e-12)


def test_uniform_log_probs_give_ln_c():
    logp = np.full((5, 7), -math.log(7))
    loss, dlogp = masked_nll_loss(logp, np.arange(5) % 7, np.ones(5, bool))
    assert abs(loss - math.log(7)) < 1e-15
    assert np.isclose(dlogp.sum(), -1.0)


def test_nll_ignores_unmasked_rows_and_rejects_empty_mask():
    logp = log_softmax_rows(np.random.default_rng(0).normal(size=(4, 3)))
    mask = np.array([True, False, True, False])
    loss, d = masked_nll_loss(logp, np.array([0, 1, 2, 0]), mask)
    assert np.all(d[~mask] == 0)
    assert np.isclose(loss, -(logp[0, 0] + logp[2, 2]) / 2)
    with pytest.raises(ValueError):
        masked_nll_loss(logp, np.zeros(4, int), np.zeros(4, bool))


@pytest.mark.parametrize("p", [0.1, 0.5, 0.6])
def test_dropout_survivor_statistics(p):
    x = np.ones((400, 500))
    y, mask = dropout(x, p, RngStream(11, 3), training=True)
    keep = (y != 0).mean()
    assert abs(keep - (1 - p)) < 0.01
    assert np.allclose(y[y != 0], 1 / (1 - p))
    assert abs(y.mean() - 1.0) < 0.02


def test_dropout_is_identity_in_eval_and_keyed_by_stream():
    x = np.arange(12.0).reshape(3, 4)
    y, mask = dropout(x, 0.5, RngStream(0), training=False)
    assert y is x and mask is None
    a, _ = dropout(x, 0.5, RngStream(1, 7), True)
    b, _ = dropout(x, 0.5, RngStream(1, 7), True)
    c, _ = dropout(x, 0.5, RngStream(1, 8), True)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    with pytest.raises(ValueError):
        dropout(x, 1.0, RngStream(0), True)


def test_stream_ids_are_distinct():
    ids = {stream_id(s, layer, mb) for s in range(3) for layer in range(6) for mb in range(5)}
    assert len(ids) == 90
    with pytest.raises(ValueError):
        stream_id(0, 1 << 16, 0)


def test_adam_first_step_moves_by_lr():
    p = Param(np.array([3.0]))
    p.grad[:] = 1.0
    adam_step([p], 1, lr=0.01, weight_decay=0.0)
    assert abs(p.value[0] - (3.0 - 0.01)) < 1e-9


def test_adam_minimises_square():
    w = Param(np.array([1.0]))
    opt = Adam([w], lr=0.1, weight_decay=0.0)
    for _ in range(100):
        opt.zero_grad()
        w.grad += 2 * w.value
        opt.step()
    assert abs(w.value[0]) < 0.1


def test_adam_weight_decay_is_folded_into_gradient():
    a, b = Param(np.array([2.0])), Param(np.array([2.0]))
    b.grad[:] = 5e-4 * 2.0
    adam_step([a], 1, weight_decay=5e-4)
    adam_step([b], 1, weight_decay=0.0)
    assert a.value[0] == b.value[0]


def _chain(d_in=5, seed=0):
    rng = np.random.default_rng(seed)
    layers = [Dropout(0.3), Linear(d_in, 4, rng), ELU(), Linear(4, 3, rng), LogSoftmax()]
    for i, layer in enumerate(layers):
        layer.index = i
    x = rng.normal(size=(6, d_in))
    labels = rng.integers(0, 3, 6)
    params = [p for layer in layers for p in layer.params]

    def loss():
        for p in params:
            p.zero_grad()
        ctx = ForwardContext(training=True, seed=4, step=1)
        b, caches = BatchTuple(np.arange(6), x), []
        for layer in layers:
            b, c = layer.forward(b, ctx)
            caches.append(c)
        value, d = masked_nll_loss(b.feats, labels, np.ones(6, bool))
        for layer, c in zip(reversed(layers), reversed(caches)):
            d = layer.backward(c, d)
        return value

    return loss, params


def test_layer_chain_grad_check():
    loss, params = _chain()
    assert grad_check(loss, params) < 1e-4


def test_grad_check_catches_a_wrong_gradient():
    loss, params = _chain()

    def broken():
        value = loss()
        params[0].grad *= 1.5
        return value

    assert grad_check(broken, params) > 0.1


def test_grad_check_rejects_a_random_forward():
    p = Param(np.ones(2))
    rng = np.random.default_rng(0)
    with pytest.raises(NondeterministicForward):
        grad_check(lambda: float(rng.random()), [p])
