"""Association module: encode the input sub-graph, score one-hop candidates,
select or sample the words to add, and the policy-gradient update pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .akwg import SubGraph
from .ndcore.nn import MASK_OFF


@dataclass
class SelectionTrace:
    chosen: list[int]
    log_probs: list  # per-draw scalar tensors, differentiable
    n_words: int

    def log_prob_values(self) -> list[float]:
        return [float(lp.data) for lp in self.log_probs]


def attn_pooling(h, wa, u):
    """Softmax-weighted sum of node states: sum_i softmax(u' tanh(Wa h_i)) h_i."""
    scores = nd.matmul(nd.tanh(nd.matmul(h, wa)), u)  # [n, 1]
    weights = nd.softmax(nd.transpose(scores))  # [1, n]
    return nd.matmul(weights, h)  # [1, hidden]


def gated_gcn_encode(sub: SubGraph, params, cfg, prefix: str = "assoc"):
    """GatedGCN with gated attentive pooling.

    Per layer: graph convolution, then an LSTM gate rowwise over nodes with
    the layer index as the recurrent step; the pooled global vector runs
    through its own LSTM gate. Returns (node states [n, h], global [1, h]).
    """
    if len(sub) == 0:
        raise ValueError("cannot encode an empty sub-graph")
    x = nd.add(
        nd.gather_rows(params[f"{prefix}.word_emb"], sub.node_ids),
        nd.gather_rows(params[f"{prefix}.type_emb"], sub.node_types),
    )
    h = nd.add(nd.matmul(x, params[f"{prefix}.in_proj.w"]), params[f"{prefix}.in_proj.b"])
    adj = nd.constant(sub.norm_adj)
    n, hidden = len(sub), cfg.hidden_size
    cell = nd.constant(np.zeros((n, hidden)))
    wa, u = params[f"{prefix}.pool.wa"], params[f"{prefix}.pool.u"]
    g = attn_pooling(h, wa, u)
    g_cell = nd.constant(np.zeros((1, hidden)))
    for l in range(cfg.gcn_layers):
        agg = nd.gcn_layer(h, adj, params[f"{prefix}.gcn{l}.w"])
        h, cell = nd.lstm_cell(agg, (h, cell), params.sub(f"{prefix}.gcn{l}.lstm"))
        pooled = attn_pooling(h, wa, u)
        g, g_cell = nd.lstm_cell(pooled, (g, g_cell), params.sub(f"{prefix}.gcn{l}.glstm"))
    return h, g


def score_candidates(g, candidate_ids: list[int], params, cfg):
    """Linear score over [global; candidate embedding] for each candidate.

    Returns a [m, 1] tensor; empty candidate list gives an empty tensor.
    """
    hidden, emb = cfg.hidden_size, cfg.emb_size
    if not candidate_ids:
        return nd.constant(np.zeros((0, 1)))
    w = params["assoc.score_w"]
    w_g = nd.slice_rows(w, 0, hidden)
    w_v = nd.slice_rows(w, hidden, hidden + emb)
    v_c = nd.gather_rows(params["assoc.word_emb"], candidate_ids)
    return nd.add(nd.matmul(v_c, w_v), nd.matmul(g, w_g))  # [m,1] + [1,1] broadcast


def select_top_phi(scores, candidates: list[int], phi: int) -> list[int]:
    """Deterministic top-phi by score, ties to the smaller word id."""
    vals = scores.data.reshape(-1) if isinstance(scores, nd.Tensor) else np.asarray(scores, dtype=float).reshape(-1)
    if len(vals) != len(candidates):
        raise ValueError("scores and candidates must align")
    order = sorted(range(len(candidates)), key=lambda i: (-vals[i], candidates[i]))
    return [candidates[i] for i in order[: max(phi, 0)]]


def sample_phi(scores, candidates: list[int], phi: int, temperature: float,
               rng, base_nodes: int = 0) -> SelectionTrace:
    """Sample min(phi, m) candidates without replacement from softmax(scores/T).

    The distribution renormalizes over the remaining candidates after each
    draw; per-draw log-probabilities stay differentiable through the scores.
    base_nodes is the pre-extension sub-graph size, so n_words covers the
    extended graph.
    """
    m = len(candidates)
    k = min(max(phi, 0), m)
    scaled = nd.transpose(nd.scale(scores, 1.0 / temperature))  # [1, m]
    chosen_idx: list[int] = []
    log_probs = []
    mask = np.zeros((1, m))
    for _ in range(k):
        logits = nd.add(scaled, nd.constant(mask.copy()))
        lsm = nd.log_softmax(logits)
        p = np.exp(lsm.data.reshape(-1))
        p = p / p.sum()
        idx = int(rng.choice(m, p=p))
        log_probs.append(nd.pick(lsm, 0, idx))
        chosen_idx.append(idx)
        mask[0, idx] = MASK_OFF
    chosen = [candidates[i] for i in chosen_idx]
    return SelectionTrace(chosen=chosen, log_probs=log_probs,
                          n_words=base_nodes + len(chosen))


def compute_reward(target: list[int], probs) -> float:
    """1 - tanh(cross entropy) of the gold-token probabilities, in (0, 1]."""
    probs = list(probs)
    if len(probs) == 0 or len(target) != len(probs):
        raise ValueError("need one gold probability per target token")
    if any(p <= 0.0 for p in probs):
        raise ValueError("gold probabilities must be positive")
    ce = -sum(math.log(p) for p in probs) / len(probs)
    return 1.0 - math.tanh(ce)


@dataclass
class RewardBaseline:
    """Exponential moving average of observed rewards."""

    decay: float = 0.99
    value: float = 0.0
    count: int = 0

    def update(self, reward: float) -> None:
        if self.count == 0:
            self.value = reward
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * reward
        self.count += 1


def reinforce_update(trace: SelectionTrace, reward: float, baseline: RewardBaseline):
    """REINFORCE loss -(reward - b) * sum(log pi) / n_words; updates b after use.

    Returns the scalar loss tensor (None when the trace is empty); gradients
    reach only the association parameters the log-probs depend on.
    """
    advantage = reward - baseline.value
    baseline.update(reward)
    if not trace.log_probs:
        return None
    total = trace.log_probs[0]
    for lp in trace.log_probs[1:]:
        total = nd.add(total, lp)
    return nd.scale(total, -advantage / max(trace.n_words, 1))
