import math
from itertools import permutations

import numpy as np
import pytest

import qvadgen.ndcore as nd
from qvadgen.akwg import ASSOCIATED, KEYWORD, QUERY, SubGraph
from qvadgen.config import RunConfig
from qvadgen.corpus import BOS_ID, EOS_ID
from qvadgen.generation import (
    decode_train,
    embed_nodes,
    encode_graph,
    generate,
    gold_token_probs,
)
from qvadgen.ndcore.params import init_model_params


def small_cfg(**kw):
    base = dict(emb_size=16, hidden_size=32, heads=2, ffn_size=32,
                gcn_layers=1, encoder_layers=1, decoder_layers=1)
    base.update(kw)
    return RunConfig(**base)


def rig_forced_token(params, token, strength=1000.0):
    """Make `token` win the argmax at every step via the final LN bias."""
    params["gen.dec_ln.b"].data[:] = 0.0
    params["gen.dec_ln.b"].data[0, 0] = strength
    params["gen.out_proj.w"].data[:] = 0.0
    params["gen.out_proj.w"].data[0, token] = strength


def test_embed_nodes_zero_type_embeddings():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=0)
    params["gen.type_emb"].data[:] = 0.0
    sub = SubGraph([3, 5], [KEYWORD, QUERY], [])
    x = embed_nodes(sub, params)
    assert np.allclose(x.data, params["gen.word_emb"].data[[3, 5]])


def test_embed_nodes_type_difference_is_linear():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=1)
    a = embed_nodes(SubGraph([4], [KEYWORD], []), params)
    b = embed_nodes(SubGraph([4], [ASSOCIATED], []), params)
    diff = params["gen.type_emb"].data[ASSOCIATED] - params["gen.type_emb"].data[KEYWORD]
    assert np.allclose(b.data - a.data, diff, atol=1e-12)


def test_embed_nodes_shape_and_bad_type():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=0)
    x = embed_nodes(SubGraph([1, 2, 3], [KEYWORD] * 3, []), params)
    assert x.shape == (3, cfg.emb_size)
    bad = SubGraph([1], [KEYWORD], [])
    bad.node_types = [7]
    with pytest.raises(ValueError):
        embed_nodes(bad, params)


def test_encode_single_node():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=0)
    enc = encode_graph(SubGraph([4], [KEYWORD], []), params, cfg)
    assert enc.memories.shape == (1, cfg.hidden_size)


def test_encode_empty_errors():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=0)
    with pytest.raises(ValueError):
        encode_graph(SubGraph([], [], []), params, cfg)


def test_encode_permutation_equivariance():
    cfg = small_cfg(encoder_layers=2)
    params = init_model_params(cfg, 20, seed=2)
    ids = [3, 7, 11, 15]
    types = [KEYWORD, KEYWORD, QUERY, ASSOCIATED]
    edges = [(0, 1, 1.4), (2, 3, 1.1)]
    base = encode_graph(SubGraph(ids, types, edges), params, cfg).memories.data
    for perm in list(permutations(range(4)))[:6]:
        inv = {p: i for i, p in enumerate(perm)}
        p_edges = [tuple(sorted((inv[i], inv[j]))) + (w,) for i, j, w in edges]
        sub = SubGraph([ids[p] for p in perm], [types[p] for p in perm], p_edges)
        mem = encode_graph(sub, params, cfg).memories.data
        assert np.abs(mem - base[list(perm)]).max() < 1e-6


def test_decode_train_loss_is_per_token_mean():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=3)
    sub = SubGraph([4, 5], [KEYWORD] * 2, [])
    enc = encode_graph(sub, params, cfg)
    target = [BOS_ID, 7, EOS_ID]
    logits, loss, probs = decode_train(enc, target, params, cfg)
    assert logits.shape == (2, 12)
    steps = -np.log(probs[np.arange(2), target[1:]])
    assert loss.item() == pytest.approx(steps.mean(), abs=1e-12)


def test_decode_train_rejects_overlong_target():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=0)
    enc = encode_graph(SubGraph([4], [KEYWORD], []), params, cfg)
    target = [BOS_ID] + [5] * (cfg.max_text_len + 1) + [EOS_ID]
    with pytest.raises(ValueError):
        decode_train(enc, target, params, cfg)


def test_decode_train_untrained_loss_near_log_vocab():
    cfg = RunConfig()
    vocab = 150
    params = init_model_params(cfg, vocab, seed=4)
    enc = encode_graph(SubGraph([4, 9, 12], [KEYWORD] * 3, [(0, 1, 1.0)]), params, cfg)
    _, loss, _ = decode_train(enc, [BOS_ID, 30, 40, 50, EOS_ID], params, cfg)
    assert abs(loss.item() - math.log(vocab)) / math.log(vocab) < 0.10


def test_gold_token_probs_match_decode():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=5)
    enc = encode_graph(SubGraph([4, 5], [KEYWORD] * 2, []), params, cfg)
    target = [BOS_ID, 7, 9, EOS_ID]
    probs = gold_token_probs(enc, target, params, cfg)
    _, _, full = decode_train(enc, target, params, cfg)
    assert probs == pytest.approx([full[i, t] for i, t in enumerate(target[1:])])


def test_generate_forced_token_repeats_to_max_len():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=6)
    rig_forced_token(params, token=7)
    enc = encode_graph(SubGraph([4], [KEYWORD], []), params, cfg)
    out = generate(enc, params, cfg, mode="greedy")
    assert out == [7] * cfg.max_text_len


def test_generate_eos_first_gives_empty():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=6)
    rig_forced_token(params, token=EOS_ID)
    enc = encode_graph(SubGraph([4], [KEYWORD], []), params, cfg)
    assert generate(enc, params, cfg, mode="greedy") == []
    assert generate(enc, params, cfg, mode="beam") == []


def test_beam_size_one_matches_greedy():
    cfg = small_cfg(beam_size=1)
    params = init_model_params(cfg, 30, seed=7)
    enc = encode_graph(SubGraph([4, 8, 11], [KEYWORD] * 3, [(0, 2, 1.3)]), params, cfg)
    assert generate(enc, params, cfg, mode="beam") == generate(enc, params, cfg, mode="greedy")


def test_generate_never_exceeds_max_len():
    cfg = small_cfg()
    params = init_model_params(cfg, 25, seed=8)
    enc = encode_graph(SubGraph([4], [KEYWORD], []), params, cfg)
    for mode in ("greedy", "beam"):
        out = generate(enc, params, cfg, mode=mode)
        assert len(out) <= cfg.max_text_len
        assert EOS_ID not in out and BOS_ID not in out


def test_generate_respects_max_len_override():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=6)
    rig_forced_token(params, token=7)
    enc = encode_graph(SubGraph([4], [KEYWORD], []), params, cfg)
    assert generate(enc, params, cfg, mode="greedy", max_len=5) == [7] * 5


def test_generate_unknown_mode():
    cfg = small_cfg()
    params = init_model_params(cfg, 12, seed=0)
    enc = encode_graph(SubGraph([4], [KEYWORD], []), params, cfg)
    with pytest.raises(ValueError):
        generate(enc, params, cfg, mode="sampled")


def test_greedy_invariant_under_node_permutation():
    cfg = small_cfg()
    params = init_model_params(cfg, 20, seed=9)
    ids = [3, 7, 11]
    sub = SubGraph(ids, [KEYWORD] * 3, [(0, 1, 1.2)])
    perm = SubGraph([7, 3, 11], [KEYWORD] * 3, [(0, 1, 1.2)])
    out1 = generate(encode_graph(sub, params, cfg), params, cfg)
    out2 = generate(encode_graph(perm, params, cfg), params, cfg)
    assert out1 == out2
