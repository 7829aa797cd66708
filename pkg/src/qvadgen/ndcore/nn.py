"""Neural building blocks composed from tape ops: LSTM cell, GCN layer,
multi-head attention with pre-norm residual blocks, positional encodings.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    layer_norm,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    slice_cols,
    softmax,
    tanh,
    transpose,
)

MASK_OFF = -1e30  # additive score for blocked attention positions


def lstm_cell(x, state, w):
    """One LSTM step. x: [n, d]; state: (h, c) each [n, H].

    w holds w_ih [d, 4H], w_hh [H, 4H], b [1, 4H] with gate order i, f, g, o.
    """
    h, c = state
    hidden = h.shape[1]
    pre = add(add(matmul(x, w["w_ih"]), matmul(h, w["w_hh"])), w["b"])
    i = sigmoid(slice_cols(pre, 0, hidden))
    f = sigmoid(slice_cols(pre, hidden, 2 * hidden))
    g = tanh(slice_cols(pre, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_cols(pre, 3 * hidden, 4 * hidden))
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2


def gcn_layer(h, norm_adj, w):
    """relu(norm_adj @ H @ W)."""
    return relu(matmul(matmul(norm_adj, h), w))


def multi_head_attention(q, k, v, mask, w, n_heads: int):
    """Scaled dot-product attention over n_heads column blocks.

    mask is an additive [T, S] array (0 kept, MASK_OFF blocked) or None.
    Returns (output, list of per-head attention weight arrays).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    hidden = q.shape[1]
    if hidden % n_heads != 0:
        raise ValueError(f"head count {n_heads} does not divide hidden size {hidden}")
    if mask is not None and mask.shape != (q.shape[0], k.shape[0]):
        raise ValueError(f"mask shape {mask.shape} does not match ({q.shape[0]}, {k.shape[0]})")
    dh = hidden // n_heads
    qp = add(matmul(q, w["wq"]), w["bq"])
    kp = add(matmul(k, w["wk"]), w["bk"])
    vp = add(matmul(v, w["wv"]), w["bv"])
    mask_t = Tensor(mask) if mask is not None else None
    outs, weights = [], []
    for i in range(n_heads):
        lo, hi = i * dh, (i + 1) * dh
        scores = scale(matmul(slice_cols(qp, lo, hi), transpose(slice_cols(kp, lo, hi))),
                       1.0 / math.sqrt(dh))
        if mask_t is not None:
            scores = add(scores, mask_t)
        attn = softmax(scores)
        outs.append(matmul(attn, slice_cols(vp, lo, hi)))
        weights.append(attn.data)
    out = add(matmul(concat(outs, axis=1), w["wo"]), w["bo"])
    return out, weights


def feed_forward(x, w):
    return add(matmul(relu(add(matmul(x, w["ffn.w1"]), w["ffn.b1"])), w["ffn.w2"]), w["ffn.b2"])


def attention_block(q, k, v, mask, w, n_heads: int):
    """Pre-norm attention sublayer + feed-forward sublayer with residuals.

    q/k/v share the first layer norm; pass the same tensor three times for
    self-attention. Returns (output, per-head attention weights).
    """
    qn = layer_norm(q, w["ln1.g"], w["ln1.b"])
    kn = qn if k is q else layer_norm(k, w["ln1.g"], w["ln1.b"])
    vn = kn if v is k else layer_norm(v, w["ln1.g"], w["ln1.b"])
    att, attn_w = multi_head_attention(qn, kn, vn, mask, sub_weights(w, "attn"), n_heads)
    x = add(q, att)
    out = add(x, feed_forward(layer_norm(x, w["ln2.g"], w["ln2.b"]), w))
    return out, attn_w


def sub_weights(w, prefix: str) -> dict:
    cut = len(prefix) + 1
    return {name[cut:]: t for name, t in w.items() if name.startswith(prefix + ".")}


def causal_mask(n: int) -> np.ndarray:
    """Additive mask blocking attention to later positions."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = MASK_OFF
    return m


def sinusoidal_encoding(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    div = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: dim // 2])
    return table
