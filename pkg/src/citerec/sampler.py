"""Training-triplet generation with three kinds of negatives.

Negatives come from three pools: uniformly random non-citations, nearest
neighbors in the current embedding space that pass a text-dissimilarity
filter ("sufficiently wrong" lookalikes), and citations of the query's
citations that the query does not cite itself. Empty pools fall back to
random negatives so every query yields a full set of triplets.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .ann import AnnForest, query_index
from .corpus import CorpusStore, Document, TRAIN
from .embedder import (
    CITATION_OF_CITATION,
    CorpusEmbeddings,
    EmbedderParams,
    NEAREST_NEIGHBOR,
    RANDOM,
    Triplet,
    doc_embedding,
)

logger = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    triplets_per_query: int = 6
    mix_random: float = 0.5
    mix_nearest: float = 1 / 3
    mix_citation: float = 1 / 6
    max_true_citations: int = 100
    min_true_citations: int = 2
    jaccard_percentile: float = 5.0
    nn_pool_size: int = 10
    search_budget: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.triplets_per_query < 1:
            raise ValueError("triplets_per_query must be >= 1")
        total = self.mix_random + self.mix_nearest + self.mix_citation
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"negative-type mix ratios must sum to 1, got {total}")

    def counts(self) -> dict[str, int]:
        n = self.triplets_per_query
        n_nearest = round(n * self.mix_nearest)
        n_citation = round(n * self.mix_citation)
        n_random = n - n_nearest - n_citation
        if n_random < 0:
            raise ValueError("mix ratios round to more triplets than requested")
        return {RANDOM: n_random, NEAREST_NEIGHBOR: n_nearest, CITATION_OF_CITATION: n_citation}


def jaccard_similarity(a: Document, b: Document) -> float:
    """Jaccard over unique tokens of title + abstract; 0 when both are empty."""
    ta = a.text_types()
    tb = b.text_types()
    union = len(ta | tb)
    if union == 0:
        return 0.0
    return len(ta & tb) / union


def hard_negative_filter(
    query: Document,
    neighbors: list[str],
    store: CorpusStore,
    percentile: float = 5.0,
) -> list[str]:
    """Keep non-citation neighbors less textually similar than the weakest citations.

    The threshold is the given percentile (linear interpolation) of the
    Jaccard similarities between the query and its true citations; neighbors
    strictly below it are "sufficiently wrong": close in the embedding space
    yet dissimilar in text.
    """
    citations = [c for c in query.out_citations if c in store]
    if not citations:
        logger.warning("query %s has no in-corpus citations; no hard negatives", query.id)
        return []
    jaccards = [jaccard_similarity(query, store[c]) for c in citations]
    threshold = float(np.percentile(jaccards, percentile))
    cited = set(query.out_citations)
    return [
        n
        for n in neighbors
        if n != query.id
        and n not in cited
        and jaccard_similarity(query, store[n]) < threshold
    ]


def citations_of_citations(query: Document, store: CorpusStore) -> set[str]:
    """Documents cited by the query's citations but not by the query itself."""
    direct = set(query.out_citations)
    result: set[str] = set()
    for cited_id in query.out_citations:
        if cited_id in store:
            result.update(store[cited_id].out_citations)
    result -= direct
    result.discard(query.id)
    return result


def _query_rng(seed: int, query_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(query_id.encode("utf-8"))])


class TripletSampler:
    """Draws triplets deterministically per (rng_seed, query id).

    The epoch enters only through the forest and parameters passed in, which
    the training loop refreshes before each epoch; with frozen parameters the
    same query always yields the same triplets.
    """

    def __init__(self, config: SamplerConfig | None = None):
        self.config = config or SamplerConfig()

    def sample_triplets(
        self,
        query: Document,
        store: CorpusStore,
        forest: AnnForest,
        params: EmbedderParams,
        embeddings: CorpusEmbeddings | None = None,
    ) -> list[Triplet]:
        cfg = self.config
        if len(store) < 2:
            raise ValueError("corpus must contain at least 2 documents to sample triplets")
        citations = [c for c in query.out_citations if c in store]
        if not citations:
            return []
        rng = _query_rng(cfg.rng_seed, query.id)

        pool_ids = store.split_ids(TRAIN) if store.splits else store.ids()

        positives = sorted(citations)
        if len(positives) > cfg.max_true_citations:
            positives = [
                str(p)
                for p in rng.choice(positives, size=cfg.max_true_citations, replace=False)
            ]

        counts = cfg.counts()
        cited = set(query.out_citations)

        hard_pool: list[str] = []
        if counts[NEAREST_NEIGHBOR] > 0:
            e_q = embeddings.vector(query.id) if embeddings and query.id in embeddings \
                else doc_embedding(query, params)
            if np.any(e_q):
                fetched = query_index(
                    forest, e_q, cfg.nn_pool_size + 1, cfg.search_budget
                ).items
                neighbor_ids = [i for i, _ in fetched if i != query.id][: cfg.nn_pool_size]
                hard_pool = hard_negative_filter(
                    query, neighbor_ids, store, cfg.jaccard_percentile
                )

        coc_pool = sorted(
            citations_of_citations(query, store) & set(pool_ids)
        ) if counts[CITATION_OF_CITATION] > 0 else []

        def draw_random_negative() -> str:
            while True:
                candidate = pool_ids[int(rng.integers(len(pool_ids)))]
                if candidate != query.id and candidate not in cited:
                    return candidate

        negatives: list[tuple[str, str]] = []
        chosen_hard = [
            str(n)
            for n in rng.choice(
                hard_pool, size=min(counts[NEAREST_NEIGHBOR], len(hard_pool)), replace=False
            )
        ] if hard_pool else []
        chosen_coc = [
            str(n)
            for n in rng.choice(
                coc_pool, size=min(counts[CITATION_OF_CITATION], len(coc_pool)), replace=False
            )
        ] if coc_pool else []
        negatives += [(n, NEAREST_NEIGHBOR) for n in chosen_hard]
        negatives += [(n, CITATION_OF_CITATION) for n in chosen_coc]
        while len(negatives) < cfg.triplets_per_query:
            negatives.append((draw_random_negative(), RANDOM))

        triplets = []
        for neg_id, neg_type in negatives:
            pos_id = positives[int(rng.integers(len(positives)))]
            triplets.append(
                Triplet(
                    query=query,
                    positive=store[pos_id],
                    negative=store[neg_id],
                    negative_type=neg_type,
                )
            )
        return triplets
