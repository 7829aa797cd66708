"""Generation module: graph-aware encoder (GatedGCN front + self-attention
layers over extended sub-graph nodes) and the autoregressive decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .akwg import SubGraph
from .corpus import BOS_ID, EOS_ID
from .ndcore.nn import causal_mask, feed_forward, multi_head_attention, sub_weights


@dataclass
class EncodedGraph:
    memories: nd.Tensor  # [n, hidden]
    node_ids: list[int]
    node_types: list[int]


def embed_nodes(sub: SubGraph, params, prefix: str = "gen"):
    """x = word embedding + type embedding; no positional encoding on nodes."""
    if any(t not in (0, 1, 2) for t in sub.node_types):
        raise ValueError(f"unknown node type in {sub.node_types}")
    return nd.add(
        nd.gather_rows(params[f"{prefix}.word_emb"], sub.node_ids),
        nd.gather_rows(params[f"{prefix}.type_emb"], sub.node_types),
    )


def encode_graph(sub: SubGraph, params, cfg) -> EncodedGraph:
    """Embeddings -> projection -> GatedGCN layers -> attention layers."""
    if len(sub) == 0:
        raise ValueError("cannot encode an empty graph")
    x = embed_nodes(sub, params)
    h = nd.add(nd.matmul(x, params["gen.in_proj.w"]), params["gen.in_proj.b"])
    adj = nd.constant(sub.norm_adj)
    cell = nd.constant(np.zeros((len(sub), cfg.hidden_size)))
    for l in range(cfg.gcn_layers):
        agg = nd.gcn_layer(h, adj, params[f"gen.gcn{l}.w"])
        h, cell = nd.lstm_cell(agg, (h, cell), params.sub(f"gen.gcn{l}.lstm"))
    for l in range(cfg.encoder_layers):
        h, _ = nd.attention_block(h, h, h, None, params.sub(f"gen.enc{l}"), cfg.heads)
    h = nd.layer_norm(h, params["gen.enc_ln.g"], params["gen.enc_ln.b"])
    return EncodedGraph(memories=h, node_ids=list(sub.node_ids), node_types=list(sub.node_types))


def _decoder_stack(token_ids: list[int], enc: EncodedGraph, params, cfg):
    """Causal decoder over a BOS-prefixed token list; returns [T, V] logits."""
    t = len(token_ids)
    x = nd.add(
        nd.gather_rows(params["gen.word_emb"], token_ids),
        nd.slice_rows(params["gen.pos_enc"], 0, t),
    )
    x = nd.add(nd.matmul(x, params["gen.dec_in_proj.w"]), params["gen.dec_in_proj.b"])
    mask = causal_mask(t)
    for l in range(cfg.decoder_layers):
        w = params.sub(f"gen.dec{l}")
        sn = nd.layer_norm(x, w["ln1.g"], w["ln1.b"])
        att, _ = multi_head_attention(sn, sn, sn, mask, sub_weights(w, "self"), cfg.heads)
        x = nd.add(x, att)
        cn = nd.layer_norm(x, w["ln2.g"], w["ln2.b"])
        cross, _ = multi_head_attention(cn, enc.memories, enc.memories, None,
                                        sub_weights(w, "cross"), cfg.heads)
        x = nd.add(x, cross)
        fn = nd.layer_norm(x, w["ln3.g"], w["ln3.b"])
        x = nd.add(x, feed_forward(fn, w))
    x = nd.layer_norm(x, params["gen.dec_ln.g"], params["gen.dec_ln.b"])
    return nd.matmul(x, params["gen.out_proj.w"])


def decode_train(enc: EncodedGraph, target: list[int], params, cfg, pad_mask=None):
    """Teacher-forced decode of a BOS...EOS target.

    Returns (logits [T, V], per-token mean cross-entropy loss, probability
    matrix). The loss normalization is by target length, so sentence losses
    are comparable across lengths.
    """
    if len(target) > cfg.max_text_len + 2:
        raise ValueError(f"target length {len(target)} exceeds {cfg.max_text_len + 2}")
    if len(target) < 2 or target[0] != BOS_ID:
        raise ValueError("target must start with BOS and contain at least one step")
    logits = _decoder_stack(target[:-1], enc, params, cfg)
    loss, probs = nd.softmax_cross_entropy(logits, target[1:], pad_mask=pad_mask)
    return logits, loss, probs


def gold_token_probs(enc: EncodedGraph, target: list[int], params, cfg) -> list[float]:
    """Teacher-forced probability of each gold token (BOS excluded)."""
    with nd.no_grad():
        _, _, probs = decode_train(enc, target, params, cfg)
    gold = target[1:]
    return [float(probs[i, tok]) for i, tok in enumerate(gold)]


def generate(enc: EncodedGraph, params, cfg, mode: str = "greedy",
             max_len: int | None = None) -> list[int]:
    """Decode content token ids from BOS until EOS or max_len tokens."""
    limit = cfg.max_text_len if max_len is None else min(max_len, cfg.max_text_len)
    if mode == "greedy":
        return _greedy(enc, params, cfg, limit)
    if mode == "beam":
        return _beam(enc, params, cfg, limit, cfg.beam_size)
    raise ValueError(f"unknown decode mode {mode!r}")


def _greedy(enc, params, cfg, limit: int) -> list[int]:
    seq = [BOS_ID]
    with nd.no_grad():
        for _ in range(limit + 1):
            logits = _decoder_stack(seq, enc, params, cfg)
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == EOS_ID:
                break
            seq.append(nxt)
            if len(seq) - 1 >= limit:
                break
    return seq[1:]


def _beam(enc, params, cfg, limit: int, beam_size: int) -> list[int]:
    """Length-normalized beam search; beam size 1 matches greedy decoding."""
    live = [([BOS_ID], 0.0)]
    done: list[tuple[list[int], float]] = []
    with nd.no_grad():
        for _ in range(limit + 1):
            expansions = []
            for seq, score in live:
                logits = _decoder_stack(seq, enc, params, cfg)
                row = logits.data[-1]
                logp = row - row.max()
                logp = logp - np.log(np.exp(logp).sum())
                top = np.argsort(-logp, kind="stable")[: beam_size]
                for tok in top:
                    expansions.append((seq + [int(tok)], score + float(logp[tok])))
            expansions.sort(key=lambda e: (-e[1], e[0]))
            live = []
            for seq, score in expansions[: beam_size * 2]:
                if seq[-1] == EOS_ID:
                    done.append((seq[1:-1], score / max(len(seq) - 1, 1)))
                elif len(seq) - 1 >= limit:
                    done.append((seq[1:], score / max(len(seq) - 1, 1)))
                else:
                    live.append((seq, score))
                if len(live) >= beam_size:
                    break
            if not live:
                break
    if not done:
        done = [(seq[1:], score / max(len(seq) - 1, 1)) for seq, score in live]
    done.sort(key=lambda e: (-e[1], e[0]))
    return done[0][0]
