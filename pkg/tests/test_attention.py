from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_attn, naive_softmax
from vlnce.attention import (
    ACTION_HEAD,
    ATTN,
    CMAParams,
    FeatureSet,
    GRUParams,
    LSTMParams,
    ModelDims,
    Seq2SeqParams,
    action_head,
    attn,
    attn_weights,
    cma_step,
    cma_trace,
    grad_check,
    gru_cell,
    lstm_encode,
    load_params,
    mean_pool,
    save_params,
    seq2seq_step,
)
from vlnce.errors import DimensionMismatch, EmptyInput, NonFiniteGradient, ParseError
from vlnce.world import Action


def test_mean_pool_cases():
    assert np.array_equal(mean_pool([[1.0, 2.0, 3.0]]), [1.0, 2.0, 3.0])
    assert np.array_equal(mean_pool([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
    rng = np.random.default_rng(0)
    v = rng.normal(size=(16, 8))
    want = [math.fsum(v[:, j]) / 16 for j in range(8)]
    assert np.allclose(mean_pool(v), want, rtol=0, atol=1e-12)
    with pytest.raises(EmptyInput):
        mean_pool(np.zeros((0, 3)))


def test_attn_single_and_identical_inputs():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 6))
    q, W = rng.normal(size=3), rng.normal(size=(3, 6))
    assert np.array_equal(attn(x, q, W), x[0])
    two = np.vstack([x, x])
    assert np.array_equal(attn_weights(two, q, W), [0.5, 0.5])
    assert np.allclose(attn(two, q, W), x[0], atol=0, rtol=1e-15)


def test_attn_matches_naive_recomputation():
    rng = np.random.default_rng(2)
    X, q, W = rng.normal(size=(5, 8)), rng.normal(size=4), rng.normal(size=(4, 8))
    out, alpha = naive_attn(X, q, W)
    assert np.allclose(attn(X, q, W), out, atol=1e-12, rtol=0)
    assert np.allclose(attn_weights(X, q, W), alpha, atol=1e-12, rtol=0)
    assert abs(attn_weights(X, q, W).sum() - 1) <= 1e-12


def test_attn_dimension_checks():
    with pytest.raises(DimensionMismatch):
        attn(np.ones((3, 4)), np.ones(2), np.ones((2, 5)))
    with pytest.raises(EmptyInput):
        attn(np.zeros((0, 4)), np.ones(2), np.ones((2, 4)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 9), lam=st.floats(0.01, 100))
def test_attention_simplex_and_convex_hull(seed, n, lam):
    rng = np.random.default_rng(seed)
    X, q, W = rng.normal(size=(n, 5)), rng.normal(size=3), rng.normal(size=(3, 5))
    for query in (q, lam * q):
        a = attn_weights(X, query, W)
        assert np.all(a >= 0) and abs(a.sum() - 1) <= 1e-12
        out = attn(X, query, W)
        assert np.all(out >= X.min(axis=0) - 1e-12) and np.all(out <= X.max(axis=0) + 1e-12)


def test_action_head_ties_and_oracle():
    logits, probs, a = action_head(np.zeros(3), np.zeros((4, 3)), np.zeros(4))
    assert np.array_equal(probs, [0.25] * 4) and a == Action.FORWARD
    rng = np.random.default_rng(3)
    h, W, b = rng.normal(size=6), rng.normal(size=(4, 6)), rng.normal(size=4)
    logits, probs, a = action_head(h, W, b)
    want = naive_softmax([sum(W[i, j] * h[j] for j in range(6)) + b[i] for i in range(4)])
    assert np.allclose(probs, want, atol=1e-12, rtol=0)
    _, p2, a2 = action_head(h, W, b + 17.0)
    assert np.allclose(p2, probs, atol=1e-12, rtol=0) and a2 == a
    with pytest.raises(DimensionMismatch):
        action_head(h, W[:3], b)


def test_grad_checks():
    rng = np.random.default_rng(4)
    r = grad_check(ATTN, {"W_K": rng.normal(size=(3, 6))}, {"inputs": rng.normal(size=(4, 6)), "q": rng.normal(size=3)})
    assert r.max_relative_error < 1e-4
    assert set(r.per_parameter) == {"W_K", "inputs", "q"}
    r = grad_check(ACTION_HEAD, {"W_a": rng.normal(size=(4, 5)), "b_a": rng.normal(size=4)}, {"h": rng.normal(size=5)})
    assert r.max_relative_error < 1e-6
    with pytest.raises(ValueError):
        grad_check(ATTN, {"W_K": np.ones((1, 1))}, {"inputs": np.ones((1, 1)), "q": np.ones(1)}, epsilon=1e-2)


class Constant:
    def forward(self, v):
        return np.array([2.0, 3.0])

    def backward(self, v, upstream):
        return {k: np.zeros_like(a) for k, a in v.items()}


class Broken:
    def forward(self, v):
        return v["x"].copy()

    def backward(self, v, upstream):
        return {"x": np.full_like(v["x"], np.nan)}


def test_grad_check_constant_and_nonfinite():
    assert grad_check(Constant(), {"x": np.ones(3)}).max_relative_error == 0.0
    with pytest.raises(NonFiniteGradient):
        grad_check(Broken(), {"x": np.ones(2)})


def test_gru_and_lstm_shapes():
    rng = np.random.default_rng(5)
    p = GRUParams.init(rng, 3, 4)
    h = gru_cell(np.ones(3), np.zeros(4), p)
    assert h.shape == (4,) and np.all(np.abs(h) < 1)
    with pytest.raises(DimensionMismatch):
        gru_cell(np.ones(2), np.zeros(4), p)
    lp = LSTMParams.init(rng, 3, 5)
    assert lstm_encode(rng.normal(size=(7, 3)), lp).shape == (7, 5)


def small_dims(cells=4):
    return ModelDims(visual=6, depth=4, instruction=8, hidden=10, action_embedding=32, word=5, visual_cells=cells, depth_cells=cells)


def features(rng, dims, T=3):
    return FeatureSet(
        rng.normal(size=(dims.visual_cells, dims.visual)),
        rng.normal(size=(dims.depth_cells, dims.depth)),
        rng.normal(size=(T, dims.instruction)),
    )


def test_cma_single_cell_single_token_is_passthrough():
    dims = small_dims(cells=1)
    params = CMAParams.init(dims, seed=0)
    f = features(np.random.default_rng(6), dims, T=1)
    tr = cma_trace(f, None, params.initial_state(), params)
    assert np.array_equal(tr.s_hat, f.instruction[0])
    assert np.array_equal(tr.v_hat, f.visual[0])
    assert np.array_equal(tr.d_hat, f.depth[0])


def test_cma_visual_permutation_invariance():
    dims = small_dims()
    params = CMAParams.init(dims, seed=1)
    rng = np.random.default_rng(7)
    f = features(rng, dims)
    g = FeatureSet(f.visual[rng.permutation(dims.visual_cells)], f.depth, f.instruction)
    a = cma_trace(f, Action.FORWARD, params.initial_state(), params)
    b = cma_trace(g, Action.FORWARD, params.initial_state(), params)
    assert np.allclose(a.v_hat, b.v_hat, atol=1e-12, rtol=0)


def test_rollouts_are_deterministic():
    dims = small_dims()
    rng = np.random.default_rng(8)
    feats = [features(rng, dims) for _ in range(20)]

    def roll_cma():
        params = CMAParams.init(dims, seed=3)
        hs, prev, out = params.initial_state(), None, []
        for f in feats:
            p, hs = cma_step(f, prev, hs, params)
            prev = Action(int(np.argmax(p)))
            out.append(p)
        return np.array(out)

    def roll_s2s():
        params = Seq2SeqParams.init(dims, seed=3)
        h, out = params.initial_state(), []
        for f in feats:
            p, h = seq2seq_step(f, h, params)
            out.append(p)
        return np.array(out)

    assert np.array_equal(roll_cma(), roll_cma())
    assert np.array_equal(roll_s2s(), roll_s2s())
    assert np.allclose(roll_cma().sum(axis=1), 1.0)


def test_stage_named_in_dimension_errors():
    dims = small_dims()
    params = CMAParams.init(dims, seed=0)
    f = FeatureSet(np.ones((4, 7)), np.ones((4, 4)), np.ones((2, 8)))
    with pytest.raises(DimensionMismatch, match="cma"):
        cma_step(f, None, params.initial_state(), params)
    bad_depth = FeatureSet(np.ones((4, 6)), np.ones((3, 4)), np.ones((2, 8)))
    with pytest.raises(DimensionMismatch, match="depth"):
        seq2seq_step(bad_depth, np.zeros(10), Seq2SeqParams.init(dims))


@pytest.mark.parametrize("kind", [Seq2SeqParams, CMAParams])
def test_param_file_round_trip(kind, tmp_path):
    dims = small_dims()
    params = kind.init(dims, seed=9)
    save_params(params, tmp_path / "p.txt")
    back = load_params(tmp_path / "p.txt")
    assert type(back) is kind and back.dims == dims
    f = features(np.random.default_rng(10), dims)
    if kind is CMAParams:
        a = cma_step(f, None, params.initial_state(), params)[0]
        b = cma_step(f, None, back.initial_state(), back)[0]
    else:
        a = seq2seq_step(f, params.initial_state(), params)[0]
        b = seq2seq_step(f, back.initial_state(), back)[0]
    assert np.array_equal(a, b)


def test_param_file_errors(tmp_path):
    p = tmp_path / "p.txt"
    save_params(Seq2SeqParams.init(small_dims()), p)
    text = p.read_text()
    p.write_text(text.replace("hidden=10", "hidden=11"))
    with pytest.raises(DimensionMismatch):
        load_params(p)
    p.write_text(text.rsplit("\n", 3)[0] + "\n")
    with pytest.raises(ParseError):
        load_params(p)
