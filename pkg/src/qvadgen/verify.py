"""Finite-difference gradient suite over every op and both model stacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .akwg import KEYWORD, SubGraph
from .association import gated_gcn_encode, score_candidates
from .config import RunConfig
from .generation import decode_train, encode_graph
from .ndcore.gradcheck import grad_check
from .ndcore.params import init_model_params

LINEAR_TOL = 1e-6
COMPOSITE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_err < self.tol


def _rand(rng, *shape):
    return nd.Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)


def _op_checks(rng):
    a = _rand(rng, 3, 4)
    b = _rand(rng, 3, 4)
    m = _rand(rng, 4, 5)
    row = _rand(rng, 1, 4)
    gamma = _rand(rng, 1, 4)
    beta = _rand(rng, 1, 4)
    emb = _rand(rng, 6, 4)
    pos = nd.Tensor(np.abs(rng.normal(1.0, 0.3, size=(3, 4))) + 0.5, requires_grad=True)
    logits = _rand(rng, 3, 5)
    targets = [0, 3, 1]
    lstm_w = {
        "w_ih": _rand(rng, 4, 16),
        "w_hh": _rand(rng, 4, 16),
        "b": _rand(rng, 1, 16),
    }
    x = _rand(rng, 3, 4)
    h0 = _rand(rng, 3, 4)
    c0 = _rand(rng, 3, 4)
    adj_raw = rng.normal(0.0, 1.0, size=(3, 3))
    adj = nd.Tensor((adj_raw + adj_raw.T) / 2.0)
    w44 = _rand(rng, 4, 4)
    attn_w = {
        "ln1.g": _rand(rng, 1, 4), "ln1.b": _rand(rng, 1, 4),
        "ln2.g": _rand(rng, 1, 4), "ln2.b": _rand(rng, 1, 4),
        "attn.wq": _rand(rng, 4, 4), "attn.bq": _rand(rng, 1, 4),
        "attn.wk": _rand(rng, 4, 4), "attn.bk": _rand(rng, 1, 4),
        "attn.wv": _rand(rng, 4, 4), "attn.bv": _rand(rng, 1, 4),
        "attn.wo": _rand(rng, 4, 4), "attn.bo": _rand(rng, 1, 4),
        "ffn.w1": _rand(rng, 4, 8), "ffn.b1": _rand(rng, 1, 8),
        "ffn.w2": _rand(rng, 8, 4), "ffn.b2": _rand(rng, 1, 4),
    }
    mask = nd.causal_mask(3)

    def ce():
        loss, _ = nd.softmax_cross_entropy(logits, targets, pad_mask=[True, False, True])
        return loss

    checks = [
        ("add", lambda: nd.sum_all(nd.mul(nd.add(a, b), nd.add(a, b))), [a, b], LINEAR_TOL),
        ("add_broadcast", lambda: nd.sum_all(nd.mul(nd.add(a, row), nd.add(a, row))), [a, row], LINEAR_TOL),
        ("sub", lambda: nd.sum_all(nd.mul(nd.sub(a, b), a)), [a, b], LINEAR_TOL),
        ("mul", lambda: nd.sum_all(nd.mul(a, b)), [a, b], LINEAR_TOL),
        ("scale", lambda: nd.sum_all(nd.scale(nd.mul(a, a), 2.5)), [a], LINEAR_TOL),
        ("matmul", lambda: nd.sum_all(nd.mul(nd.matmul(a, m), nd.matmul(a, m))), [a, m], LINEAR_TOL),
        ("transpose", lambda: nd.sum_all(nd.mul(nd.transpose(a), nd.transpose(b))), [a, b], LINEAR_TOL),
        ("tanh", lambda: nd.sum_all(nd.tanh(a)), [a], LINEAR_TOL),
        ("sigmoid", lambda: nd.sum_all(nd.sigmoid(a)), [a], LINEAR_TOL),
        ("relu", lambda: nd.sum_all(nd.relu(nd.add(pos, nd.scale(pos, 0.5)))), [pos], LINEAR_TOL),
        ("exp", lambda: nd.sum_all(nd.exp(nd.scale(a, 0.3))), [a], COMPOSITE_TOL),
        ("log", lambda: nd.sum_all(nd.log(pos)), [pos], COMPOSITE_TOL),
        ("concat", lambda: nd.sum_all(nd.mul(nd.concat([a, b], axis=1), nd.concat([b, a], axis=1))), [a, b], LINEAR_TOL),
        ("slice_rows", lambda: nd.sum_all(nd.mul(nd.slice_rows(a, 1, 3), nd.slice_rows(b, 0, 2))), [a, b], LINEAR_TOL),
        ("slice_cols", lambda: nd.sum_all(nd.mul(nd.slice_cols(a, 1, 3), nd.slice_cols(b, 1, 3))), [a, b], LINEAR_TOL),
        ("gather_rows", lambda: nd.sum_all(nd.mul(nd.gather_rows(emb, [0, 2, 2, 5]), nd.gather_rows(emb, [1, 2, 2, 4]))), [emb], LINEAR_TOL),
        ("pick", lambda: nd.pick(nd.mul(a, b), 1, 2), [a, b], LINEAR_TOL),
        ("softmax", lambda: nd.sum_all(nd.mul(nd.softmax(a), b)), [a, b], COMPOSITE_TOL),
        ("log_softmax", lambda: nd.sum_all(nd.mul(nd.log_softmax(a), b)), [a, b], COMPOSITE_TOL),
        ("layer_norm", lambda: nd.sum_all(nd.mul(nd.layer_norm(a, gamma, beta), b)), [a, gamma, beta], COMPOSITE_TOL),
        ("softmax_cross_entropy", ce, [logits], COMPOSITE_TOL),
        ("lstm_cell", lambda: nd.sum_all(nd.mul(*nd.lstm_cell(x, (h0, c0), lstm_w))), [x, h0, c0] + list(lstm_w.values()), COMPOSITE_TOL),
        ("gcn_layer", lambda: nd.sum_all(nd.mul(nd.gcn_layer(x, adj, w44), b)), [x, w44], COMPOSITE_TOL),
        ("attention_block", lambda: nd.sum_all(nd.mul(nd.attention_block(x, x, x, mask, attn_w, 2)[0], b)), [x] + list(attn_w.values()), COMPOSITE_TOL),
    ]
    return checks


def _toy_subgraph(n: int = 4) -> SubGraph:
    edges = [(0, 1, 1.5), (1, 2, 1.2)] if n >= 3 else []
    return SubGraph(list(range(10, 10 + n)), [KEYWORD] * n, edges)


def _model_checks(cfg: RunConfig, max_coords: int):
    rng = np.random.default_rng(7)
    vocab_size = 24
    params = init_model_params(cfg, vocab_size, seed=11)
    # nudge the zero-initialized scorer so its gradients are informative
    params["assoc.score_w"].data += rng.normal(0.0, 0.05,
                                               size=params["assoc.score_w"].shape)
    sub = _toy_subgraph(4)
    cand_ids = [2, 7, 9]
    head = nd.Tensor(rng.normal(0.0, 0.5, size=(1, cfg.hidden_size)), requires_grad=False)

    def assoc_loss():
        _, g = gated_gcn_encode(sub, params, cfg)
        scores = score_candidates(g, cand_ids, params, cfg)
        return nd.add(nd.sum_all(scores), nd.sum_all(nd.mul(g, head)))

    target = [1, 12, 5, 19, 2]  # BOS w w w EOS

    def gen_loss():
        enc = encode_graph(_toy_subgraph(5), params, cfg)
        _, loss, _ = decode_train(enc, target, params, cfg)
        return loss

    assoc_tensors = [t for _, t in params.group("assoc")]
    gen_all = params.group("gen")
    # forward passes at full dims are not free; stride-sample the generator
    # tensors so the composite check stays inside the runtime budget
    stride = max(1, len(gen_all) // 16)
    gen_tensors = [t for _, t in gen_all[::stride]]
    return [
        ("association_encoder_and_scorer",
         lambda: grad_check(assoc_loss, assoc_tensors, max_coords=max_coords, seed=3),
         COMPOSITE_TOL),
        ("generation_encode_decode_loss",
         lambda: grad_check(gen_loss, gen_tensors, max_coords=max_coords, seed=4),
         COMPOSITE_TOL),
    ]


def gradient_suite(full: bool = True) -> list[CheckResult]:
    """Run every gradient check; full mode uses the paper-sized model dims."""
    rng = np.random.default_rng(5)
    results = []
    for name, f, tensors, tol in _op_checks(rng):
        results.append(CheckResult(name, grad_check(f, tensors, max_coords=24, seed=1), tol))
    if full:
        cfg = RunConfig()
        max_coords = 4
    else:
        cfg = RunConfig(emb_size=16, hidden_size=32, heads=2, ffn_size=32,
                        gcn_layers=1, encoder_layers=1, decoder_layers=1)
        max_coords = 6
    for name, runner, tol in _model_checks(cfg, max_coords):
        results.append(CheckResult(name, runner(), tol))
    return results
