import numpy as np
import pytest

import qvadgen.ndcore as nd
from qvadgen.ndcore.optim import Adam, NonFiniteGradient
from qvadgen.ndcore.tensor import Tensor


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


def zero_lstm(d, h):
    return {"w_ih": t(np.zeros((d, 4 * h))), "w_hh": t(np.zeros((h, 4 * h))),
            "b": t(np.zeros((1, 4 * h)))}


def test_lstm_zero_weights_zero_state():
    w = zero_lstm(3, 2)
    h, c = nd.lstm_cell(t(np.ones((2, 3))), (t(np.zeros((2, 2))), t(np.zeros((2, 2)))), w)
    assert np.all(h.data == 0.0) and np.all(c.data == 0.0)


def test_lstm_forget_gate_saturation_preserves_cell():
    d, hidden = 2, 3
    w = zero_lstm(d, hidden)
    b = np.full((1, 4 * hidden), -1e3)
    b[:, hidden:2 * hidden] = 1e3  # forget gate wide open, others shut
    w["b"] = t(b)
    c0 = np.array([[0.3, -0.7, 1.2]])
    _, c1 = nd.lstm_cell(t(np.zeros((1, d))), (t(np.zeros((1, hidden))), t(c0)), w)
    assert np.allclose(c1.data, c0, atol=1e-12)


def test_lstm_shape_mismatch():
    w = zero_lstm(3, 2)
    with pytest.raises(ValueError):
        nd.lstm_cell(t(np.ones((2, 5))), (t(np.zeros((2, 2))), t(np.zeros((2, 2)))), w)


def test_gcn_identity_passthrough():
    h = t(np.abs(np.random.default_rng(0).normal(size=(3, 3))))
    out = nd.gcn_layer(h, t(np.eye(3)), t(np.eye(3)))
    assert np.allclose(out.data, h.data)


def test_gcn_isolated_node_aggregates_itself():
    adj = np.eye(3)
    adj[0, 1] = adj[1, 0] = 0.5
    h = np.abs(np.random.default_rng(1).normal(size=(3, 4))) + 0.1
    out = nd.gcn_layer(t(h), t(adj), t(np.eye(4)))
    assert np.allclose(out.data[2], h[2])


def test_gcn_path_graph_center_mix():
    # 3-node path: normalized adjacency mixes all three rows at the center
    from qvadgen.akwg import normalized_adjacency

    adj = normalized_adjacency(3, [(0, 1, 1.0), (1, 2, 1.0)])
    h = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    w = np.eye(2)
    out = nd.gcn_layer(t(h), t(adj), t(w))
    expected = np.maximum(adj @ h @ w, 0.0)
    assert np.allclose(out.data, expected, atol=1e-12)
    assert expected[1, 0] == pytest.approx(
        adj[1, 0] * 1.0 + adj[1, 1] * 0.0 + adj[1, 2] * 2.0
    )


def attn_weights(rng, hidden, ffn):
    def rnd(*shape):
        return t(rng.normal(0.0, 0.3, size=shape), grad=False)

    w = {"ln1.g": t(np.ones((1, hidden))), "ln1.b": t(np.zeros((1, hidden))),
         "ln2.g": t(np.ones((1, hidden))), "ln2.b": t(np.zeros((1, hidden))),
         "ffn.w1": rnd(hidden, ffn), "ffn.b1": t(np.zeros((1, ffn))),
         "ffn.w2": rnd(ffn, hidden), "ffn.b2": t(np.zeros((1, hidden)))}
    for part in ("wq", "wk", "wv", "wo"):
        w[f"attn.{part}"] = rnd(hidden, hidden)
    for part in ("bq", "bk", "bv", "bo"):
        w[f"attn.{part}"] = t(np.zeros((1, hidden)))
    return w


def test_attention_single_position_weight_one():
    rng = np.random.default_rng(2)
    w = attn_weights(rng, 4, 8)
    x = t(rng.normal(size=(1, 4)))
    out, weights = nd.attention_block(x, x, x, None, w, 2)
    assert out.shape == (1, 4)
    for head in weights:
        assert head == pytest.approx(np.ones((1, 1)))


def test_attention_causal_mask_step1():
    rng = np.random.default_rng(3)
    w = attn_weights(rng, 4, 8)
    x = t(rng.normal(size=(3, 4)))
    _, weights = nd.attention_block(x, x, x, nd.causal_mask(3), w, 2)
    for head in weights:
        # row 1 may attend to positions 0..1 only; masked entries are exactly 0
        assert head[1, 2] == 0.0
        assert head[0, 1] == head[0, 2] == 0.0
        assert head[1, :2].sum() == pytest.approx(1.0)


def test_attention_identical_keys_uniform():
    rng = np.random.default_rng(4)
    w = attn_weights(rng, 4, 8)
    q = t(rng.normal(size=(1, 4)))
    k = t(np.tile(rng.normal(size=(1, 4)), (5, 1)))
    _, weights = nd.multi_head_attention(q, k, k, None, nd.sub_weights(w, "attn"), 2)
    for head in weights:
        assert head == pytest.approx(np.full((1, 5), 0.2))


def test_attention_rows_sum_to_one_under_mask():
    rng = np.random.default_rng(5)
    w = attn_weights(rng, 4, 8)
    x = t(rng.normal(size=(4, 4)))
    _, weights = nd.attention_block(x, x, x, nd.causal_mask(4), w, 2)
    for head in weights:
        assert head.sum(axis=1) == pytest.approx(np.ones(4))


def test_attention_mask_shape_error():
    rng = np.random.default_rng(6)
    w = attn_weights(rng, 4, 8)
    x = t(rng.normal(size=(3, 4)))
    with pytest.raises(ValueError):
        nd.attention_block(x, x, x, nd.causal_mask(2), w, 2)


def test_attention_head_count_must_divide():
    rng = np.random.default_rng(7)
    w = attn_weights(rng, 4, 8)
    x = t(rng.normal(size=(2, 4)))
    with pytest.raises(ValueError):
        nd.attention_block(x, x, x, None, w, 3)


def test_sinusoidal_encoding_shape_and_range():
    table = nd.sinusoidal_encoding(22, 128)
    assert table.shape == (22, 128)
    assert np.abs(table).max() <= 1.0
    assert table[0, 0] == 0.0 and table[0, 1] == 1.0


def adam_param(val):
    p = Tensor(np.asarray(val, dtype=np.float64), requires_grad=True)
    return p


def test_adam_zero_gradient_noop():
    p = adam_param([[1.0, -2.0]])
    opt = Adam([("p", p)], lr=0.1)
    p.grad = np.zeros_like(p.data)
    opt.step()
    assert np.array_equal(p.data, [[1.0, -2.0]])


def test_adam_first_step_closed_form():
    p = adam_param([[0.0]])
    lr, eps = 0.05, 1e-8
    opt = Adam([("p", p)], lr=lr, eps=eps)
    p.grad = np.ones_like(p.data)
    opt.step()
    assert p.data[0, 0] == pytest.approx(-lr / (1.0 + eps), rel=1e-12)


def test_adam_missing_grad_treated_as_zero():
    p = adam_param([[3.0]])
    opt = Adam([("p", p)], lr=0.1)
    opt.step()
    assert p.data[0, 0] == pytest.approx(3.0)


def test_adam_lr_zero_identity():
    p = adam_param([[1.0, 2.0]])
    opt = Adam([("p", p)], lr=0.0)
    p.grad = np.random.default_rng(0).normal(size=p.data.shape)
    opt.step()
    assert np.array_equal(p.data, [[1.0, 2.0]])


def test_adam_deterministic_across_runs():
    def run():
        rng = np.random.default_rng(42)
        p = adam_param(rng.normal(size=(4, 4)))
        opt = Adam([("p", p)], lr=1e-3)
        for _ in range(20):
            p.grad = rng.normal(size=p.data.shape)
            opt.step()
        return p.data.tobytes()

    assert run() == run()


def test_adam_refuses_non_finite():
    p = adam_param([[1.0]])
    opt = Adam([("p", p)], lr=0.1)
    p.grad = np.array([[np.nan]])
    with pytest.raises(NonFiniteGradient):
        opt.step()
    assert p.data[0, 0] == 1.0  # step refused, param untouched
