"""Building blocks: shapes, parameter accounting, gradient flow."""

import numpy as np
import pytest

import dehomodet.tensor as T
from dehomodet.layers import Attention, Block, Linear, Mlp, attention_param_count, count_params


def test_linear_shapes_and_params():
    rng = np.random.default_rng(0)
    lin = Linear(rng, 3, 5, "lin")
    out = lin(T.tensor(np.zeros((2, 3))))
    assert out.shape == (2, 5)
    assert np.array_equal(out.data, np.zeros((2, 5)))  # zero bias at init
    assert count_params(lin.params()) == 3 * 5 + 5
    with pytest.raises(ValueError):
        Linear(rng, 0, 5, "bad")


def test_linear_zero_init():
    lin = Linear(np.random.default_rng(0), 3, 3, "z", zero_init=True)
    x = T.tensor(np.random.default_rng(1).normal(size=(2, 3)))
    assert np.array_equal(lin(x).data, np.zeros((2, 3)))


def test_attention_param_count_matches_helper():
    d = 8
    attn = Attention(np.random.default_rng(0), d, "attn")
    assert count_params(attn.params()) == attention_param_count(d) == 4 * (d * d + d)


def test_attention_row_counts_follow_queries():
    rng = np.random.default_rng(0)
    attn = Attention(rng, 4, "attn")
    q = T.tensor(rng.normal(size=(3, 4)))
    kv = T.tensor(rng.normal(size=(7, 4)))
    assert attn(q, kv).shape == (3, 4)


def test_block_self_and_cross_share_structure():
    rng = np.random.default_rng(0)
    blk = Block(rng, 4, "blk")
    x = T.tensor(rng.normal(size=(5, 4)))
    kv = T.tensor(rng.normal(size=(9, 4)))
    assert blk(x).shape == (5, 4)
    assert blk(x, kv).shape == (5, 4)
    d = 4
    assert count_params(blk.params()) == attention_param_count(d) + (d * 2 * d + 2 * d) + (2 * d * d + d)


def test_block_gradients_reach_every_weight():
    d = 4
    blk = Block(np.random.default_rng(3), d, "blk")
    x = T.tensor(np.random.default_rng(4).normal(size=(3, d)))
    with T.Tape() as tape:
        out = T.reduce_sum(blk(x))
        tape.backward(out)
    for name, p in blk.params():
        g = p.gradient()
        assert np.isfinite(g).all(), name
        assert np.abs(g).max() > 0.0, f"dead gradient in {name}"


def test_block_finite_diff_through_weights():
    # swap the layer's weight for a reshaped view of the probed tensor, so
    # both the analytic backward and the numeric probes read through it
    d = 3
    blk = Block(np.random.default_rng(5), d, "blk")
    x_fixed = np.random.default_rng(6).normal(size=(2, d))
    original = blk.attn.wq.weight

    def f(w):
        blk.attn.wq.weight = T.reshape(w, (d, d))
        return T.reduce_sum(blk(T.tensor(x_fixed)))

    flat = T.tensor(original.data.ravel().copy(), requires_grad=True)
    try:
        report = T.finite_diff_check(f, flat, eps=1e-5, tol=1e-4)
    finally:
        blk.attn.wq.weight = original
    assert report.ok, report.max_rel_err
