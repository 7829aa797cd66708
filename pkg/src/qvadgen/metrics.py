"""Evaluation: corpus BLEU-4, word-set recall, Dist-n, and the per-item
two-level averaged report over multi-query test items.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Record


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: list[list[str]], references: list[list[str]]) -> float:
    """Corpus BLEU-4, uniform weights, brevity penalty, add-one smoothing on
    the n >= 2 precisions. Scaled to [0, 100].
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0
    log_p_sum = 0.0
    for n in range(1, 5):
        matches = 0
        total = 0
        for cand, ref in zip(candidates, references):
            cc = ngram_counts(cand, n)
            rc = ngram_counts(ref, n)
            matches += sum(min(count, rc[g]) for g, count in cc.items())
            total += max(len(cand) - n + 1, 0)
        if n >= 2:
            p = (matches + 1) / (total + 1)
        else:
            if matches == 0:
                return 0.0
            p = matches / total
        log_p_sum += 0.25 * math.log(p)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_p_sum)


def recall(generated: list[str], target_words) -> float:
    """Percentage of target words present in the generated text (word level)."""
    targets = set(target_words)
    if not targets:
        raise ValueError("recall is undefined for an empty target set")
    return 100.0 * len(set(generated) & targets) / len(targets)


def dist_n(texts: list[list[str]], n: int) -> float:
    """Distinct n-grams over total n-grams across all texts, as a percentage."""
    if not texts:
        raise ValueError("dist_n needs at least one text")
    seen = set()
    total = 0
    for text in texts:
        for i in range(len(text) - n + 1):
            seen.add(tuple(text[i:i + n]))
            total += 1
    if total == 0:
        return 0.0
    return 100.0 * len(seen) / total


@dataclass
class Item:
    """One advertised item: fixed keywords/ad text, one or more queries."""

    keywords: tuple[str, ...]
    ad_text: list[str]
    queries: list[list[str]] = field(default_factory=list)


def group_items(records: list[Record]) -> list[Item]:
    """Group records into items by (keywords, ad text), first-seen order."""
    items: dict[tuple, Item] = {}
    for rec in records:
        key = (rec.keywords, tuple(rec.ad_text))
        if key not in items:
            items[key] = Item(keywords=rec.keywords, ad_text=list(rec.ad_text))
        items[key].queries.append(list(rec.query_words))
    return list(items.values())


@dataclass
class EvalReport:
    bleu: float
    recall_k: float
    recall_q: float
    recall_qk: float
    dist1: float
    dist2: float
    recall_k_original: float
    recall_q_original: float
    recall_qk_original: float
    recall_k_delta: float
    recall_q_delta: float
    recall_qk_delta: float
    n_items: int
    n_pairs: int
    skipped_empty_query: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _mean(vals: list[float]) -> float:
    return sum(vals) / len(vals) if vals else 0.0


def evaluate_run(outputs, records: list[Record], pair_weighted: bool = False):
    """Score generations against the test set.

    outputs maps (item_index, query_index) -> dict with "gen" (query-variant
    text) and "gen_noquery" (keywords-only text). Recalls average per item
    over its queries, then over items (or over all pairs with pair_weighted).
    BLEU compares the keywords-only generations against the original texts.
    Returns (EvalReport, per-item rows).
    """
    items = group_items(records)
    missing = [
        (i, j)
        for i, item in enumerate(items)
        for j in range(len(item.queries))
        if (i, j) not in outputs
    ]
    if missing:
        raise ValueError(f"missing generations for (item, query) pairs: {missing}")
    for i, item in enumerate(items):
        for j, query in enumerate(item.queries):
            out = outputs[(i, j)]
            # generation files carry q/k; a mismatch means the wrong test set
            if "q" in out and list(out["q"]) != list(query):
                raise ValueError(
                    f"generation for (item {i}, query {j}) was produced for query "
                    f"{out['q']}, test set has {query}"
                )
            if "k" in out and sorted(out["k"]) != sorted(item.keywords):
                raise ValueError(
                    f"generation for (item {i}, query {j}) was produced for other keywords"
                )

    per_item_rows = []
    skipped_q = 0
    item_recalls = {"k": [], "q": [], "qk": []}
    orig_recalls = {"k": [], "q": [], "qk": []}
    all_gens = []
    for i, item in enumerate(items):
        kset = set(item.keywords)
        rk, rq, rqk = [], [], []
        ok, oq, oqk = [], [], []
        for j, query in enumerate(item.queries):
            gen = outputs[(i, j)]["gen"]
            all_gens.append(gen)
            qset = set(query)
            rk.append(recall(gen, kset))
            ok.append(recall(item.ad_text, kset))
            rqk.append(recall(gen, qset | kset))
            oqk.append(recall(item.ad_text, qset | kset))
            if qset:
                rq.append(recall(gen, qset))
                oq.append(recall(item.ad_text, qset))
            else:
                skipped_q += 1
        for store, vals in ((item_recalls, (rk, rq, rqk)), (orig_recalls, (ok, oq, oqk))):
            for key, v in zip(("k", "q", "qk"), vals):
                if pair_weighted:
                    store[key].extend(v)
                elif v:
                    store[key].append(_mean(v))
        per_item_rows.append({
            "item": i,
            "n_queries": len(item.queries),
            "recall_k": _mean(rk),
            "recall_q": _mean(rq) if rq else None,
            "recall_qk": _mean(rqk),
        })

    noquery = [outputs[(i, 0)]["gen_noquery"] for i in range(len(items))]
    report = EvalReport(
        bleu=bleu(noquery, [item.ad_text for item in items]),
        recall_k=_mean(item_recalls["k"]),
        recall_q=_mean(item_recalls["q"]),
        recall_qk=_mean(item_recalls["qk"]),
        dist1=dist_n(all_gens, 1) if all_gens else 0.0,
        dist2=dist_n(all_gens, 2) if all_gens else 0.0,
        recall_k_original=_mean(orig_recalls["k"]),
        recall_q_original=_mean(orig_recalls["q"]),
        recall_qk_original=_mean(orig_recalls["qk"]),
        recall_k_delta=_mean(item_recalls["k"]) - _mean(orig_recalls["k"]),
        recall_q_delta=_mean(item_recalls["q"]) - _mean(orig_recalls["q"]),
        recall_qk_delta=_mean(item_recalls["qk"]) - _mean(orig_recalls["qk"]),
        n_items=len(items),
        n_pairs=sum(len(item.queries) for item in items),
        skipped_empty_query=skipped_q,
    )
    return report, per_item_rows


def write_per_item_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("item,n_queries,recall_k,recall_q,recall_qk\n")
        for r in rows:
            rq = "" if r["recall_q"] is None else f"{r['recall_q']:.6f}"
            fh.write(f"{r['item']},{r['n_queries']},{r['recall_k']:.6f},{rq},{r['recall_qk']:.6f}\n")
