"""Okapi BM25 over an inverted index, queried with extracted key terms."""

from __future__ import annotations

import json
import math
from collections import Counter
from pathlib import Path

from .corpus import CorpusStore, Document

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_KEY_TERMS = 20


class Bm25Index:
    """Inverted postings over title + abstract tokens of a document set."""

    def __init__(self, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.k1 = k1
        self.b = b
        self.ids: list[str] = []
        self.row: dict[str, int] = {}
        self.postings: dict[str, list[tuple[int, int]]] = {}
        self.doc_lengths: list[int] = []
        self.avgdl = 0.0

    @property
    def n_docs(self) -> int:
        return len(self.ids)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        n, df = self.n_docs, self.df(term)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    @classmethod
    def build(
        cls,
        store: CorpusStore,
        ids: list[str] | None = None,
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
    ) -> "Bm25Index":
        index = cls(k1=k1, b=b)
        index.ids = list(ids) if ids is not None else store.ids()
        index.row = {doc_id: i for i, doc_id in enumerate(index.ids)}
        for row, doc_id in enumerate(index.ids):
            doc = store[doc_id]
            tokens = list(doc.title) + list(doc.abstract)
            index.doc_lengths.append(len(tokens))
            for term, tf in sorted(Counter(tokens).items()):
                index.postings.setdefault(term, []).append((row, tf))
        index.avgdl = (
            sum(index.doc_lengths) / len(index.doc_lengths) if index.ids else 0.0
        )
        return index

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "k1": self.k1,
                    "b": self.b,
                    "ids": self.ids,
                    "doc_lengths": self.doc_lengths,
                    "postings": {t: p for t, p in self.postings.items()},
                }
            )
        )

    @classmethod
    def load(cls, path: str | Path) -> "Bm25Index":
        data = json.loads(Path(path).read_text())
        index = cls(k1=data["k1"], b=data["b"])
        index.ids = data["ids"]
        index.row = {doc_id: i for i, doc_id in enumerate(index.ids)}
        index.doc_lengths = data["doc_lengths"]
        index.postings = {t: [(r, tf) for r, tf in p] for t, p in data["postings"].items()}
        index.avgdl = sum(index.doc_lengths) / len(index.doc_lengths) if index.ids else 0.0
        return index


def key_terms(doc: Document, index: Bm25Index, n: int = DEFAULT_KEY_TERMS) -> list[str]:
    """Top-n tokens of title + abstract by smoothed tf-idf, ties lexicographic."""
    tf = Counter(doc.title) + Counter(doc.abstract)
    n_docs = index.n_docs
    scored = [
        (count * math.log((n_docs + 1.0) / (index.df(term) + 1.0)), term)
        for term, count in tf.items()
    ]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [term for _, term in scored[:n]]


def bm25_score(query_terms: list[str], doc_id: str, index: Bm25Index) -> float:
    """Okapi score of one document for the given terms (0 without overlap)."""
    if doc_id not in index.row:
        raise ValueError(f"document {doc_id!r} is not indexed")
    row = index.row[doc_id]
    length_norm = index.k1 * (
        1.0 - index.b + index.b * index.doc_lengths[row] / index.avgdl
    )
    score = 0.0
    for term in query_terms:
        tf = 0
        for posting_row, posting_tf in index.postings.get(term, ()):
            if posting_row == row:
                tf = posting_tf
                break
        if tf == 0:
            continue
        score += index.idf(term) * tf * (index.k1 + 1.0) / (tf + length_norm)
    return score


def bm25_rank(
    query: Document,
    index: Bm25Index,
    top_n: int = 20,
    n_key_terms: int = DEFAULT_KEY_TERMS,
) -> list[tuple[str, float]]:
    """Rank indexed documents for the query's key terms via postings traversal.

    The query document itself is excluded when it happens to be indexed. Only
    documents sharing at least one key term appear (scores are positive);
    descending score, ties by id.
    """
    terms = key_terms(query, index, n_key_terms)
    scores: dict[int, float] = {}
    for term in terms:
        postings = index.postings.get(term)
        if not postings:
            continue
        idf = index.idf(term)
        for row, tf in postings:
            norm = index.k1 * (
                1.0 - index.b + index.b * index.doc_lengths[row] / index.avgdl
            )
            scores[row] = scores.get(row, 0.0) + idf * tf * (index.k1 + 1.0) / (tf + norm)
    query_row = index.row.get(query.id)
    ranked = [
        (index.ids[row], s) for row, s in scores.items() if row != query_row
    ]
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return ranked[:top_n]
