"""Association word graph: document-level PMI statistics, the capped-degree
graph built from them, and per-example sub-graphs with normalized adjacency.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

NEG_INF = float("-inf")

# node roles inside a sub-graph
KEYWORD, QUERY, ASSOCIATED = 0, 1, 2

_MAGIC = b"AKWG0001"


@dataclass
class CooccurrenceCounts:
    """Document-frequency statistics with set semantics per document."""

    doc_count: int = 0
    df: Counter = field(default_factory=Counter)
    joint_df: Counter = field(default_factory=Counter)  # keyed by sorted pair

    def merge(self, other: "CooccurrenceCounts") -> "CooccurrenceCounts":
        out = CooccurrenceCounts(self.doc_count + other.doc_count)
        out.df = self.df + other.df
        out.joint_df = self.joint_df + other.joint_df
        return out


def count_cooccurrence(docs) -> CooccurrenceCounts:
    """Count df / joint document frequencies over an iterable of token lists.

    Each document is reduced to its token set, so repeated tokens count once
    and a pair co-occurs when both tokens appear anywhere in the document.
    """
    counts = CooccurrenceCounts()
    for doc in docs:
        toks = sorted(set(doc))
        counts.doc_count += 1
        for w in toks:
            counts.df[w] += 1
        for a, b in combinations(toks, 2):
            counts.joint_df[(a, b)] += 1
    if counts.doc_count == 0:
        raise ValueError("empty document stream")
    return counts


def pmi(counts: CooccurrenceCounts, i, j) -> float:
    """ln(p(i,j) / (p(i) p(j))) with document-count probabilities.

    Returns -inf when the pair never co-occurs.
    """
    df_i, df_j = counts.df.get(i, 0), counts.df.get(j, 0)
    if df_i <= 0 or df_j <= 0:
        raise ValueError(f"unseen word in pmi query: {i!r} or {j!r}")
    joint = counts.joint_df.get((i, j) if i <= j else (j, i), 0)
    if joint == 0:
        return NEG_INF
    n = counts.doc_count
    return math.log(joint * n / (df_i * df_j))


class Akwg:
    """Capped-degree undirected word graph; edge weight = PMI / xi."""

    def __init__(self, n_nodes: int, adj: dict[int, list[tuple[int, float]]],
                 xi: float, max_degree: int):
        self.n_nodes = n_nodes
        self.adj = adj  # node -> [(neighbor, weight)] sorted by neighbor id
        self.xi = xi
        self.max_degree = max_degree

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        return self.adj.get(i, [])

    def weight(self, i: int, j: int) -> float | None:
        for nbr, w in self.adj.get(i, []):
            if nbr == j:
                return w
        return None

    def degree(self, i: int) -> int:
        return len(self.adj.get(i, []))

    def edge_count(self) -> int:
        return sum(len(v) for v in self.adj.values()) // 2

    def edges(self):
        """Yield (i, j, weight) once per undirected edge, i < j, sorted."""
        for i in sorted(self.adj):
            for j, w in self.adj[i]:
                if i < j:
                    yield i, j, w

    @classmethod
    def from_pmi_edges(cls, n_nodes: int, pmi_edges, xi: float, max_degree: int) -> "Akwg":
        """Threshold, cap and symmetrize candidate edges given as (i, j, pmi).

        Edges with PMI > xi survive thresholding; each node keeps its
        max_degree best neighbors by descending PMI (ties to the smaller id);
        an edge survives only if retained on both endpoints.
        """
        if xi <= 0:
            raise ValueError("xi must be > 0")
        per_node: dict[int, list[tuple[float, int]]] = {}
        for i, j, p in pmi_edges:
            if i == j or not (p > xi):
                continue
            per_node.setdefault(i, []).append((p, j))
            per_node.setdefault(j, []).append((p, i))
        kept: dict[int, set[int]] = {}
        pmi_of: dict[tuple[int, int], float] = {}
        for node, cands in per_node.items():
            cands.sort(key=lambda pj: (-pj[0], pj[1]))
            kept[node] = {j for _, j in cands[:max_degree]}
            for p, j in cands:
                pmi_of[(node, j)] = p
        adj: dict[int, list[tuple[int, float]]] = {}
        for node, nbrs in kept.items():
            retained = [(j, pmi_of[(node, j)] / xi) for j in nbrs if node in kept.get(j, ())]
            if retained:
                adj[node] = sorted(retained)
        return cls(n_nodes, adj, xi, max_degree)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIdI", 1, self.n_nodes, self.xi, self.max_degree))
            for i in range(self.n_nodes):
                nbrs = self.adj.get(i, [])
                fh.write(struct.pack("<I", len(nbrs)))
                for j, w in nbrs:
                    fh.write(struct.pack("<If", j, w))

    @classmethod
    def load(cls, path) -> "Akwg":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise ValueError(f"not an AKWG file (magic {magic!r})")
            version, n_nodes, xi, max_degree = struct.unpack("<IIdI", fh.read(20))
            if version != 1:
                raise ValueError(f"unsupported AKWG version {version}")
            adj = {}
            for i in range(n_nodes):
                (count,) = struct.unpack("<I", fh.read(4))
                if count:
                    nbrs = [struct.unpack("<If", fh.read(8)) for _ in range(count)]
                    adj[i] = [(j, float(w)) for j, w in nbrs]
        return cls(n_nodes, adj, xi, max_degree)

    def export_tsv(self, path, vocab) -> None:
        """Human-readable edge list: word_i, word_j, pmi, weight."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("word_i\tword_j\tpmi\tweight\n")
            for i, j, w in self.edges():
                fh.write(f"{vocab.word(i)}\t{vocab.word(j)}\t{w * self.xi:.10g}\t{w:.10g}\n")


def build_graph(counts: CooccurrenceCounts, xi: float = 8.0, max_degree: int = 20,
                n_nodes: int | None = None) -> Akwg:
    """Build the association graph from co-occurrence counts.

    Count keys must be integer node ids when n_nodes is given; otherwise the
    node space is sized to the largest id seen.
    """
    pmi_edges = []
    for (i, j), joint in counts.joint_df.items():
        if joint == 0:
            continue
        p = math.log(joint * counts.doc_count / (counts.df[i] * counts.df[j]))
        pmi_edges.append((i, j, p))
    if n_nodes is None:
        n_nodes = max(counts.df, default=-1) + 1
    return Akwg.from_pmi_edges(n_nodes, pmi_edges, xi, max_degree)


class SubGraph:
    """Typed node set over AKWG ids with a dense normalized adjacency."""

    def __init__(self, node_ids: list[int], node_types: list[int],
                 edges: list[tuple[int, int, float]]):
        if len(node_ids) != len(set(node_ids)):
            raise ValueError("sub-graph node ids must be unique")
        self.node_ids = list(node_ids)
        self.node_types = list(node_types)
        self.edges = list(edges)  # (local_i, local_j, weight), i < j
        self.norm_adj = normalized_adjacency(len(node_ids), self.edges)

    def __len__(self) -> int:
        return len(self.node_ids)

    def id_set(self) -> set[int]:
        return set(self.node_ids)


def normalized_adjacency(n: int, edges) -> np.ndarray:
    """D^(-1/2) (A + I) D^(-1/2) with weighted A and self-loops."""
    a = np.eye(n, dtype=np.float64)
    for i, j, w in edges:
        a[i, j] += w
        a[j, i] += w
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def build_subgraph(words, graph: Akwg) -> SubGraph:
    """Sub-graph over (id, type) input words linked by AKWG edges.

    Duplicated ids collapse to one node with the keyword type winning. Node
    order is keywords then query words, each ascending by id.
    """
    types: dict[int, int] = {}
    for wid, typ in words:
        if typ not in (KEYWORD, QUERY):
            raise ValueError(f"input word type must be keyword or query, got {typ}")
        types[wid] = min(typ, types.get(wid, typ))
    if not types:
        raise ValueError("cannot build a sub-graph from an empty word set")
    node_ids = sorted((i for i, t in types.items() if t == KEYWORD)) + sorted(
        (i for i, t in types.items() if t == QUERY)
    )
    node_types = [types[i] for i in node_ids]
    edges = _edges_within(node_ids, graph)
    return SubGraph(node_ids, node_types, edges)


def _edges_within(node_ids: list[int], graph: Akwg) -> list[tuple[int, int, float]]:
    index = {wid: pos for pos, wid in enumerate(node_ids)}
    edges = []
    for wid in node_ids:
        for nbr, w in graph.neighbors(wid):
            if nbr in index and wid < nbr:
                a, b = index[wid], index[nbr]
                edges.append((min(a, b), max(a, b), w))
    edges.sort()
    return edges


def one_hop_candidates(sub: SubGraph, graph: Akwg, exclude: set[int]):
    """AKWG neighbors of the sub-graph nodes, minus exclude, ascending by id.

    Each candidate carries its weighted anchor edges into the sub-graph.
    """
    anchors: dict[int, list[tuple[int, float]]] = {}
    for wid in sub.node_ids:
        for nbr, w in graph.neighbors(wid):
            if nbr in exclude:
                continue
            anchors.setdefault(nbr, []).append((wid, w))
    return [(cand, sorted(anchors[cand])) for cand in sorted(anchors)]


def extend_subgraph(sub: SubGraph, chosen: list[int], graph: Akwg) -> SubGraph:
    """Append chosen nodes as associated words and relink over AKWG edges."""
    present = sub.id_set()
    for wid in chosen:
        if wid in present:
            raise ValueError(f"chosen node {wid} is already in the sub-graph")
        present.add(wid)
    node_ids = sub.node_ids + list(chosen)
    node_types = sub.node_types + [ASSOCIATED] * len(chosen)
    edges = _edges_within(node_ids, graph)
    return SubGraph(node_ids, node_types, edges)
