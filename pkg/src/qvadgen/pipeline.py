"""End-to-end inference: per-(item, query) generation under a selection
policy, JSONL output, and the selection-policy comparison harness.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import ndcore as nd
from .akwg import Akwg, SubGraph, extend_subgraph, one_hop_candidates
from .association import gated_gcn_encode, score_candidates, select_top_phi
from .config import RunConfig
from .corpus import Record, Vocab, encode
from .generation import encode_graph, generate
from .metrics import evaluate_run, group_items
from .trainer import prepare_infer_input, prepare_train_input

POLICIES = ("learned", "random", "pmi", "nofilter")


@dataclass
class GenOutput:
    item: int
    query_index: int
    q: list[str]
    k: list[str]
    chosen: list[str]
    gen: list[str]
    gen_noquery: list[str]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def choose_candidates(policy: str, sub: SubGraph, graph: Akwg, params, cfg,
                      rng) -> list[int]:
    """Pick the associated words for one example under a named policy."""
    cands = one_hop_candidates(sub, graph, sub.id_set())
    if not cands:
        return []
    cand_ids = [c for c, _ in cands]
    if policy == "nofilter":
        return cand_ids
    if policy == "random":
        k = min(cfg.phi, len(cand_ids))
        picked = rng.choice(len(cand_ids), size=k, replace=False)
        return [cand_ids[int(i)] for i in sorted(picked)]
    if policy == "pmi":
        # strongest anchor edge first; weight is PMI scaled by a constant
        strength = {c: max(w for _, w in edges) for c, edges in cands}
        order = sorted(cand_ids, key=lambda c: (-strength[c], c))
        return order[: cfg.phi]
    if policy == "learned":
        with nd.no_grad():
            _, g = gated_gcn_encode(sub, params, cfg)
            scores = score_candidates(g, cand_ids, params, cfg)
        return select_top_phi(scores, cand_ids, cfg.phi)
    raise ValueError(f"unknown selection policy {policy!r}")


def _generate_one(sub: SubGraph, graph, params, cfg, policy, rng, mode):
    chosen = choose_candidates(policy, sub, graph, params, cfg, rng)
    ext = extend_subgraph(sub, chosen, graph)
    enc = encode_graph(ext, params, cfg)
    return generate(enc, params, cfg, mode=mode), chosen, ext


def generate_outputs(records: list[Record], vocab: Vocab, graph: Akwg, params,
                     cfg: RunConfig, *, selection: str = "learned",
                     mode: str = "greedy", with_query: bool = True,
                     stopwords=frozenset(), seed: int | None = None,
                     graph_hook=None) -> list[GenOutput]:
    """One generation per (item, query) plus the keywords-only variant."""
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 17])
    stopword_ids = frozenset(vocab.id(w) for w in stopwords if w in vocab)
    items = group_items(records)
    outputs = []
    for i, item in enumerate(items):
        base = Record(query_words=[], keywords=item.keywords, ad_text=item.ad_text)
        enc_base = encode(base, vocab)
        sub_k = prepare_train_input(enc_base, graph)
        ids_nq, chosen_nq, _ = _generate_one(sub_k, graph, params, cfg, selection, rng, mode)
        gen_nq = vocab.decode_ids(ids_nq)
        for j, query in enumerate(item.queries):
            rec = Record(query_words=list(query), keywords=item.keywords, ad_text=item.ad_text)
            ex = encode(rec, vocab)
            if with_query:
                sub = prepare_infer_input(ex, graph, stopword_ids)
            else:
                sub = prepare_train_input(ex, graph)
            ids, chosen, ext = _generate_one(sub, graph, params, cfg, selection, rng, mode)
            if graph_hook is not None:
                graph_hook("infer", ex, sub, ext)
            outputs.append(GenOutput(
                item=i, query_index=j, q=list(query), k=list(item.keywords),
                chosen=vocab.decode_ids(chosen), gen=vocab.decode_ids(ids),
                gen_noquery=gen_nq,
            ))
    return outputs


def write_outputs_jsonl(path, outputs: list[GenOutput]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for out in outputs:
            fh.write(out.to_json() + "\n")


def read_outputs_jsonl(path) -> dict:
    """Load generations keyed by (item, query_index) for evaluation."""
    outputs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            outputs[(obj["item"], obj["query_index"])] = obj
    return outputs


def outputs_as_mapping(outputs: list[GenOutput]) -> dict:
    return {(o.item, o.query_index): {"gen": o.gen, "gen_noquery": o.gen_noquery}
            for o in outputs}


def compare_selection_policies(records, vocab, graph, params, cfg,
                               stopwords=frozenset(), seed: int | None = None):
    """Evaluate generations under all four candidate policies.

    Returns {policy: EvalReport}; the caller decides how to render it.
    """
    reports = {}
    for policy in POLICIES:
        outs = generate_outputs(records, vocab, graph, params, cfg,
                                selection=policy, stopwords=stopwords, seed=seed)
        report, _ = evaluate_run(outputs_as_mapping(outs), records)
        reports[policy] = report
    return reports


def comparison_table(reports: dict) -> str:
    cols = ["bleu", "recall_k", "recall_q", "recall_qk", "dist1", "dist2"]
    lines = ["policy\t" + "\t".join(cols)]
    for policy, rep in reports.items():
        lines.append(policy + "\t" + "\t".join(f"{getattr(rep, c):.2f}" for c in cols))
    return "\n".join(lines) + "\n"
