"""Ranking metrics and the shared-author rank analysis."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .corpus import CorpusStore

logger = logging.getLogger(__name__)


@dataclass
class QueryScores:
    precision_at: dict[int, float]
    recall_at: dict[int, float]
    reciprocal_rank: float


@dataclass
class MetricsReport:
    precision_at: dict[int, float]
    recall_at: dict[int, float]
    f1_at_20: float
    mrr: float
    n_queries: int
    n_excluded: int = 0
    per_query: dict[str, QueryScores] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision_at": {str(k): v for k, v in self.precision_at.items()},
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "f1_at_20": self.f1_at_20,
            "mrr": self.mrr,
            "n_queries": self.n_queries,
            "n_excluded": self.n_excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        """Fixed-width summary with the conventional column set."""
        ks = sorted(set(self.precision_at) | {20})
        header = "".join(f"{'P@' + str(k):>9}" for k in ks if k in self.precision_at)
        header += f"{'R@20':>9}{'F1@20':>9}{'MRR':>9}"
        row = "".join(
            f"{self.precision_at[k]:>9.4f}" for k in ks if k in self.precision_at
        )
        row += f"{self.recall_at.get(20, 0.0):>9.4f}{self.f1_at_20:>9.4f}{self.mrr:>9.4f}"
        return header + "\n" + row


def _first_hit_rank(ranked: list[str], gold: set[str]) -> int:
    for i, doc_id in enumerate(ranked, start=1):
        if doc_id in gold:
            return i
    return 0


def mrr(predictions: dict[str, list[str]], gold: dict[str, set[str]]) -> float:
    """Mean over queries of 1/rank of the first relevant item (0 when absent)."""
    total = 0.0
    n = 0
    for query_id, ranked in predictions.items():
        relevant = gold.get(query_id)
        if not relevant:
            continue
        rank = _first_hit_rank(ranked, relevant)
        total += 1.0 / rank if rank else 0.0
        n += 1
    return total / n if n else 0.0


def evaluate_run(
    predictions: dict[str, list[str]],
    gold: dict[str, set[str]],
    k_values: tuple[int, ...] = (10, 20),
    keep_per_query: bool = False,
) -> MetricsReport:
    """Macro-averaged P@K and R@K, corpus-level F1@20, and MRR.

    Metrics are computed per query and then averaged; F1@20 is the harmonic
    mean of the averaged P@20 and R@20. Queries with no gold citations are
    excluded (with a warning count), not scored as zero.
    """
    ks = tuple(sorted(set(k_values) | {20}))
    sums_p = {k: 0.0 for k in ks}
    sums_r = {k: 0.0 for k in ks}
    rr_total = 0.0
    n = 0
    n_excluded = 0
    per_query: dict[str, QueryScores] = {}

    for query_id, ranked in predictions.items():
        relevant = gold.get(query_id)
        if not relevant:
            n_excluded += 1
            continue
        n += 1
        p_at = {}
        r_at = {}
        for k in ks:
            hits = sum(1 for doc_id in ranked[:k] if doc_id in relevant)
            p_at[k] = hits / k
            r_at[k] = hits / len(relevant)
            sums_p[k] += p_at[k]
            sums_r[k] += r_at[k]
        rank = _first_hit_rank(ranked, relevant)
        rr = 1.0 / rank if rank else 0.0
        rr_total += rr
        if keep_per_query:
            per_query[query_id] = QueryScores(p_at, r_at, rr)

    if n_excluded:
        logger.warning("excluded %d queries with no gold citations", n_excluded)
    if n == 0:
        return MetricsReport({k: 0.0 for k in ks}, {k: 0.0 for k in ks}, 0.0, 0.0, 0, n_excluded)

    precision_at = {k: sums_p[k] / n for k in ks}
    recall_at = {k: sums_r[k] / n for k in ks}
    p20, r20 = precision_at[20], recall_at[20]
    f1 = 2 * p20 * r20 / (p20 + r20) if (p20 + r20) > 0 else 0.0
    return MetricsReport(
        precision_at, recall_at, f1, rr_total / n, n, n_excluded,
        per_query if keep_per_query else {},
    )


@dataclass
class SharedAuthorRow:
    n: int
    mean_rank: float | None
    max_rank: int | None
    n_pairs: int


def self_citation_stats(
    predictions: dict[str, list[str]],
    store: CorpusStore,
    n_values: tuple[int, ...] = (10, 50, 100),
) -> list[SharedAuthorRow]:
    """Mean and max rank of predictions sharing an author with the query.

    For each cutoff n, every (query, prediction) pair within the top n whose
    documents share at least one author contributes its 1-based rank; ranks
    are pooled over all pairs. Rows with no such pairs carry null statistics.
    """
    rows = []
    for n in n_values:
        ranks: list[int] = []
        for query_id, ranked in predictions.items():
            if query_id not in store:
                continue
            query_authors = set(store[query_id].authors)
            if not query_authors:
                continue
            for rank, doc_id in enumerate(ranked[:n], start=1):
                if doc_id in store and query_authors & set(store[doc_id].authors):
                    ranks.append(rank)
        if ranks:
            rows.append(SharedAuthorRow(n, sum(ranks) / len(ranks), max(ranks), len(ranks)))
        else:
            rows.append(SharedAuthorRow(n, None, None, 0))
    return rows
