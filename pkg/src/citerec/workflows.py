"""End-to-end pipeline steps shared by the CLI, scripts, and tests."""

from __future__ import annotations

import logging
from pathlib import Path

from .ann import AnnForest, build_index
from .bm25 import Bm25Index, bm25_rank
from .config import AppConfig
from .corpus import (
    CorpusStore,
    Vocabulary,
    VocabularyConfig,
    build_vocabulary,
    ingest_jsonl,
    split_by_year,
)
from .embedder import CorpusEmbeddings, EmbedderParams, train_embedder
from .metrics import MetricsReport, evaluate_run
from .ranker import RankerParams, rerank, train_ranker
from .sampler import TripletSampler
from .select import SweepRow, select_candidates, sweep_neighbor_count

logger = logging.getLogger(__name__)


def run_ingest(input_path: str | Path, store_dir: str | Path, config: AppConfig) -> CorpusStore:
    store = ingest_jsonl(input_path)
    split_by_year(store, config.data.train_end_year, config.data.dev_end_year)
    store.save(store_dir)
    logger.info(
        "ingested %d documents (%d edges, %d pruned)",
        store.report.n_documents, store.report.n_edges, store.report.n_pruned_edges,
    )
    return store


def _vocab_config(config: AppConfig) -> VocabularyConfig:
    return VocabularyConfig(
        text_cap=config.data.title_abstract_vocab_size,
        min_papers_per_author=config.data.min_papers_per_author,
        min_papers_per_venue=config.data.min_papers_per_venue,
        min_papers_per_keyphrase=config.data.min_papers_per_keyphrase,
    )


def run_train_select(
    store: CorpusStore, artifacts_dir: str | Path, config: AppConfig
) -> tuple[Vocabulary, EmbedderParams]:
    artifacts_dir = Path(artifacts_dir)
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    vocab = build_vocabulary(store, _vocab_config(config))
    initial = EmbedderParams.initialize(
        vocab, config.select.dense_dimension, config.rng_seed
    )
    if config.select.use_pretrained and config.select.pretrained_path:
        n_loaded = initial.load_pretrained_directions(config.select.pretrained_path)
        logger.info("loaded %d pretrained direction vectors", n_loaded)
    sampler = TripletSampler(config.sampler_config())
    params, stats = train_embedder(
        store,
        sampler,
        config.select.train_config(config.rng_seed),
        vocab=vocab,
        dim=config.select.dense_dimension,
        n_trees=config.ann.training_n_trees,
        leaf_capacity=config.ann.leaf_capacity,
        params=initial,
    )
    vocab.save(artifacts_dir / "vocab.json")
    params.save(artifacts_dir / "embedder.npz")
    logger.info("select model trained: final epoch loss %.5f", stats[-1].mean_loss)
    return vocab, params


def run_build_index(
    store: CorpusStore, artifacts_dir: str | Path, config: AppConfig
) -> AnnForest:
    """Embed the whole corpus with the trained checkpoint and build the forest."""
    artifacts_dir = Path(artifacts_dir)
    vocab = Vocabulary.load(artifacts_dir / "vocab.json")
    params = EmbedderParams.load(artifacts_dir / "embedder.npz", vocab)
    embeddings = CorpusEmbeddings.compute(params, store)
    forest = build_index(
        embeddings.as_dict(),
        n_trees=config.ann.n_trees,
        leaf_capacity=config.ann.leaf_capacity,
        seed=config.rng_seed,
    )
    forest.save(artifacts_dir / "forest.ann")
    return forest


def run_train_rank(
    store: CorpusStore,
    artifacts_dir: str | Path,
    config: AppConfig,
    checkpoint_name: str = "ranker.npz",
    use_metadata: bool | None = None,
) -> RankerParams:
    artifacts_dir = Path(artifacts_dir)
    vocab = Vocabulary.load(artifacts_dir / "vocab.json")
    eparams = EmbedderParams.load(artifacts_dir / "embedder.npz", vocab)
    sampler = TripletSampler(config.sampler_config())
    rparams, stats = train_ranker(
        store,
        sampler,
        eparams,
        config.rank.train_config(config.rng_seed),
        dim_meta=config.rank.metadata_dimension,
        hidden=config.rank.hidden_dimension,
        siamese=config.rank.use_siamese_embeddings,
        use_metadata=config.rank.use_metadata if use_metadata is None else use_metadata,
        n_trees=config.ann.training_n_trees,
        leaf_capacity=config.ann.leaf_capacity,
    )
    rparams.save(artifacts_dir / checkpoint_name)
    logger.info("reranker trained: final epoch loss %.5f", stats[-1].mean_loss)
    return rparams


def run_build_bm25(
    store: CorpusStore, artifacts_dir: str | Path, config: AppConfig
) -> Bm25Index:
    artifacts_dir = Path(artifacts_dir)
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    index = Bm25Index.build(store, k1=config.bm25.k1, b=config.bm25.b)
    index.save(artifacts_dir / "bm25.json")
    return index


def predictions_for_split(
    store: CorpusStore,
    artifacts_dir: str | Path,
    config: AppConfig,
    split: str = "test",
    mode: str = "rerank",
    max_queries: int | None = None,
    ranker_name: str = "ranker.npz",
) -> tuple[dict[str, list[str]], dict[str, set[str]]]:
    """Ranked predictions and gold citation sets for a split's eval queries."""
    artifacts_dir = Path(artifacts_dir)
    query_ids = store.eval_query_ids(split)
    if max_queries is not None:
        query_ids = query_ids[:max_queries]
    gold = {qid: set(store[qid].out_citations) for qid in query_ids}

    predictions: dict[str, list[str]] = {}
    if mode == "bm25":
        index = Bm25Index.load(artifacts_dir / "bm25.json")
        for qid in query_ids:
            ranked = bm25_rank(
                store[qid], index, top_n=100, n_key_terms=config.bm25.key_term_count
            )
            predictions[qid] = [i for i, _ in ranked]
        return predictions, gold

    vocab = Vocabulary.load(artifacts_dir / "vocab.json")
    eparams = EmbedderParams.load(artifacts_dir / "embedder.npz", vocab)
    forest = AnnForest.load(artifacts_dir / "forest.ann")
    rparams = None
    if mode == "rerank":
        rparams = RankerParams.load(artifacts_dir / ranker_name, vocab)
    for qid in query_ids:
        cset = select_candidates(
            store[qid], eparams, forest, store,
            config.select.number_ann_neighbors,
            search_budget=config.ann.search_budget,
        )
        if mode == "rerank":
            ranked = rerank(store[qid], cset, rparams, eparams, len(cset), store)
            predictions[qid] = [i for i, _ in ranked]
        else:
            predictions[qid] = cset.ids()
    return predictions, gold


def run_evaluate(
    store: CorpusStore,
    artifacts_dir: str | Path,
    config: AppConfig,
    split: str = "test",
    mode: str = "rerank",
    max_queries: int | None = None,
) -> MetricsReport:
    predictions, gold = predictions_for_split(
        store, artifacts_dir, config, split, mode, max_queries
    )
    return evaluate_run(predictions, gold)


def run_sweep(
    store: CorpusStore,
    artifacts_dir: str | Path,
    config: AppConfig,
    k_values: list[int],
    split: str = "dev",
    max_queries: int | None = 1000,
) -> list[SweepRow]:
    artifacts_dir = Path(artifacts_dir)
    vocab = Vocabulary.load(artifacts_dir / "vocab.json")
    eparams = EmbedderParams.load(artifacts_dir / "embedder.npz", vocab)
    forest = AnnForest.load(artifacts_dir / "forest.ann")
    query_ids = store.eval_query_ids(split)
    if max_queries is not None:
        query_ids = query_ids[:max_queries]
    queries = [store[qid] for qid in query_ids]
    return sweep_neighbor_count(
        queries, eparams, forest, store, k_values, search_budget=config.ann.search_budget
    )
