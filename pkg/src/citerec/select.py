"""Phase-1 candidate selection: embed, fetch neighbors, expand with their citations."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .ann import AnnForest, query_index
from .corpus import CorpusStore, Document
from .embedder import CorpusEmbeddings, EmbedderParams, doc_embedding
from .vecmath import cosine_against_matrix

NEIGHBOR = "neighbor"
NEIGHBOR_CITATION = "neighbor_citation"


class UnembeddableQueryError(ValueError):
    """The query has no usable text in either field."""


@dataclass
class Candidate:
    id: str
    score: float
    origin: str


@dataclass
class CandidateSet:
    query_id: str
    candidates: list[Candidate] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [c.id for c in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)


def select_candidates(
    query: Document,
    params: EmbedderParams,
    forest: AnnForest,
    store: CorpusStore,
    k_neighbors: int,
    search_budget: int | None = None,
    query_embedding: np.ndarray | None = None,
) -> CandidateSet:
    """Nearest neighbors of the query plus their outgoing citations, by cosine.

    The query document itself is never a candidate. Expansion documents get
    their own true cosine against the query embedding (not the neighbor's
    score), so every candidate's score is the exact similarity of stored
    embeddings; the approximation lives only in neighbor retrieval. Sorted
    descending by score, ties by id.
    """
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    e_q = query_embedding if query_embedding is not None else doc_embedding(query, params)
    if not np.any(e_q):
        raise UnembeddableQueryError(f"unembeddable query {query.id!r}: no usable text")

    fetch = k_neighbors + (1 if query.id in forest.row else 0)
    fetched = query_index(forest, e_q, fetch, search_budget).items
    neighbors = [(i, s) for i, s in fetched if i != query.id][:k_neighbors]

    candidates = {doc_id: Candidate(doc_id, score, NEIGHBOR) for doc_id, score in neighbors}
    expansion_ids: list[str] = []
    for doc_id, _ in neighbors:
        for cited in store[doc_id].out_citations:
            if cited != query.id and cited not in candidates and cited in forest.row:
                candidates[cited] = Candidate(cited, 0.0, NEIGHBOR_CITATION)
                expansion_ids.append(cited)

    if expansion_ids:
        rows = np.asarray([forest.row[i] for i in expansion_ids], dtype=np.int64)
        sims = cosine_against_matrix(forest.matrix[rows], e_q)
        for doc_id, sim in zip(expansion_ids, sims):
            candidates[doc_id].score = float(sim)

    ordered = sorted(candidates.values(), key=lambda c: (-c.score, c.id))
    return CandidateSet(query.id, ordered)


@dataclass
class SweepRow:
    k: int
    recall_at_20: float
    precision_at_20: float
    mean_latency_ms: float
    mean_candidates: float
    best: bool = False


def sweep_neighbor_count(
    queries: list[Document],
    params: EmbedderParams,
    forest: AnnForest,
    store: CorpusStore,
    k_values: list[int],
    search_budget: int | None = None,
) -> list[SweepRow]:
    """Recall/precision/latency of candidate selection per neighbor count.

    Queries without gold citations are skipped. The row with the highest
    recall is flagged ``best``.
    """
    from .metrics import evaluate_run

    eligible = [q for q in queries if any(c in store for c in q.out_citations)]
    gold = {q.id: {c for c in q.out_citations if c in store} for q in eligible}

    rows: list[SweepRow] = []
    for k in k_values:
        if eligible:  # warm caches so the first timed query is not an outlier
            select_candidates(eligible[0], params, forest, store, k, search_budget)
        predictions: dict[str, list[str]] = {}
        elapsed = 0.0
        total_candidates = 0
        for q in eligible:
            start = time.perf_counter()
            cset = select_candidates(q, params, forest, store, k, search_budget)
            elapsed += time.perf_counter() - start
            predictions[q.id] = cset.ids()
            total_candidates += len(cset)
        report = evaluate_run(predictions, gold, k_values=(20,))
        rows.append(
            SweepRow(
                k=k,
                recall_at_20=report.recall_at[20],
                precision_at_20=report.precision_at[20],
                mean_latency_ms=1000.0 * elapsed / max(len(eligible), 1),
                mean_candidates=total_candidates / max(len(eligible), 1),
            )
        )
    if rows:
        max(rows, key=lambda r: r.recall_at_20).best = True
    return rows


def format_sweep(rows: list[SweepRow]) -> str:
    lines = [f"{'neighbors':>9}  {'R@20':>7}  {'P@20':>7}  {'time(ms)':>9}  {'cands':>7}"]
    for row in rows:
        marker = " *" if row.best else ""
        lines.append(
            f"{row.k:>9}  {row.recall_at_20:>7.3f}  {row.precision_at_20:>7.3f}"
            f"  {row.mean_latency_ms:>9.2f}  {row.mean_candidates:>7.1f}{marker}"
        )
    return "\n".join(lines)
