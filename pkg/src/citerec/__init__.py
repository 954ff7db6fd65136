"""Two-phase content-based citation recommendation.

Phase 1 embeds documents with a bag-of-words magnitude-direction model and
selects candidates from an approximate-neighbor forest; phase 2 reranks the
candidates with a discriminative feedforward scorer. Includes an Okapi BM25
baseline, ranking metrics, a CLI pipeline, and an HTTP service.
"""

from .ann import AnnForest, Neighbors, brute_force_knn, build_index, query_index
from .bm25 import Bm25Index, bm25_rank, bm25_score, key_terms
from .config import AppConfig
from .corpus import (
    CorpusStore,
    Document,
    Vocabulary,
    build_vocabulary,
    ingest_jsonl,
    split_by_year,
    tokenize,
)
from .embedder import (
    CorpusEmbeddings,
    EmbedderParams,
    TrainConfig,
    Triplet,
    boost,
    doc_embedding,
    field_vector,
    gradient_check,
    train_embedder,
    triplet_loss,
)
from .metrics import MetricsReport, evaluate_run, mrr, self_citation_stats
from .ranker import (
    FeatureVector,
    RankerParams,
    gradient_check_ranker,
    rank_features,
    rank_score,
    rerank,
    train_ranker,
)
from .sampler import (
    SamplerConfig,
    TripletSampler,
    citations_of_citations,
    hard_negative_filter,
    jaccard_similarity,
)
from .select import CandidateSet, select_candidates, sweep_neighbor_count
from .service import ArtifactBundle, RecommendRequest, RecommendResponse, create_app, recommend

__version__ = "0.1.0"
