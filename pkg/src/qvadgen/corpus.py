"""Corpus loading, vocabulary construction, and id encoding.

Records arrive pre-tokenized as JSONL: {"q": [...], "k": [...], "t": [...]}.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


@dataclass
class Record:
    query_words: list[str]
    keywords: tuple[str, ...]  # deduplicated, sorted
    ad_text: list[str]


@dataclass
class LoadStats:
    kept: int = 0
    dropped: int = 0
    parse_errors: int = 0


def _string_list(obj, key):
    val = obj.get(key)
    if not isinstance(val, list) or not all(isinstance(w, str) for w in val):
        raise ValueError(f"field {key!r} must be a list of strings")
    return val


def load_records(
    path,
    stopwords: frozenset[str] | set[str] = frozenset(),
    stats: LoadStats | None = None,
    *,
    max_query_len: int = 10,
    min_keywords: int = 3,
    max_keywords: int = 10,
    max_text_len: int = 20,
) -> list[Record]:
    """Load JSONL records in file order, dropping those that violate length caps.

    Stop words are removed from the query only; the length cap applies after
    removal. Malformed lines are logged with their line number and skipped.
    """
    if stats is None:
        stats = LoadStats()
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                q = _string_list(obj, "q")
                k = _string_list(obj, "k")
                t = _string_list(obj, "t")
            except (json.JSONDecodeError, ValueError, AttributeError) as exc:
                log.warning("line %d: parse error: %s", lineno, exc)
                stats.parse_errors += 1
                continue
            q = [w for w in q if w not in stopwords]
            kset = tuple(sorted(set(k)))
            if (
                len(q) > max_query_len
                or not (min_keywords <= len(kset) <= max_keywords)
                or len(t) > max_text_len
            ):
                stats.dropped += 1
                continue
            records.append(Record(query_words=q, keywords=kset, ad_text=list(t)))
            stats.kept += 1
    return records


class Vocab:
    """Bidirectional token<->id map with fixed reserved ids 0..3."""

    def __init__(self, tokens: list[str]):
        self.id_to_word = list(SPECIALS) + list(tokens)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def id(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word(self, idx: int) -> str:
        return self.id_to_word[idx]

    def encode_tokens(self, tokens) -> list[int]:
        return [self.id(w) for w in tokens]

    def decode_ids(self, ids) -> list[str]:
        return [self.id_to_word[i] for i in ids]

    def save(self, path) -> None:
        # one token per line, line number = id - 4
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.id_to_word[len(SPECIALS):]:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([w for w in tokens if w])


def build_vocab(records: list[Record], max_size: int = 50000) -> Vocab:
    """Most frequent tokens across q, k and t; ties broken lexicographically.

    max_size counts the 4 reserved tokens, so at most max_size - 4 corpus
    tokens are kept.
    """
    if not records:
        raise ValueError("cannot build a vocabulary from an empty record list")
    if max_size < len(SPECIALS):
        raise ValueError(f"max_size must be >= {len(SPECIALS)}")
    freq = Counter()
    for rec in records:
        freq.update(rec.query_words)
        freq.update(rec.keywords)
        freq.update(rec.ad_text)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([w for w, _ in ranked[: max_size - len(SPECIALS)]])


@dataclass
class EncodedRecord:
    query_ids: list[int]
    keyword_ids: list[int]
    target_ids: list[int]  # BOS ... EOS
    record: Record = field(repr=False, default=None)


def encode(record: Record, vocab: Vocab) -> EncodedRecord:
    """Map a record to ids; OOV tokens become UNK, ad text is framed BOS..EOS."""
    return EncodedRecord(
        query_ids=vocab.encode_tokens(record.query_words),
        keyword_ids=vocab.encode_tokens(record.keywords),
        target_ids=[BOS_ID] + vocab.encode_tokens(record.ad_text) + [EOS_ID],
        record=record,
    )


def decode(enc: EncodedRecord, vocab: Vocab) -> Record:
    """Inverse of encode, with OOV tokens replaced by the UNK surface form."""
    return Record(
        query_words=vocab.decode_ids(enc.query_ids),
        keywords=tuple(sorted(set(vocab.decode_ids(enc.keyword_ids)))),
        ad_text=vocab.decode_ids(enc.target_ids[1:-1]),
    )


def load_stopwords(path) -> frozenset[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(w.strip() for w in lines if w.strip())
