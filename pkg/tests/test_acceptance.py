"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one ``ACCEPTANCE nn [PASS|FAIL]`` line (visible with
``pytest -s``). The heavier end-to-end criteria share one trained pipeline
over a seeded 2,000-document synthetic corpus with 20 topic clusters.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from fastapi.testclient import TestClient

from citerec import workflows
from citerec.ann import brute_force_knn, build_index, query_index
from citerec.bm25 import Bm25Index, bm25_score
from citerec.config import AppConfig
from citerec.corpus import CorpusStore, IngestReport
from citerec.embedder import (
    EmbedderParams,
    Triplet,
    boost,
    gradient_check,
    triplet_loss,
)
from citerec.metrics import evaluate_run, mrr, self_citation_stats
from citerec.ranker import RankerParams, gradient_check_ranker, rerank
from citerec.sampler import SamplerConfig
from citerec.select import select_candidates, sweep_neighbor_count
from citerec.service import ArtifactBundle, create_app
from citerec.synthetic import synthetic_corpus, write_jsonl

from conftest import full_vocab, make_doc, text_vocab
from test_select import toy_pipeline


@contextmanager
def criterion(num: int, description: str):
    try:
        yield
    except Exception:
        print(f"\nACCEPTANCE {num:02d} [FAIL] {description}")
        raise
    print(f"\nACCEPTANCE {num:02d} [PASS] {description}")


def random_embedder_model(seed):
    rng = np.random.default_rng(seed)
    n_tokens = int(rng.integers(8, 21))
    dim = int(rng.integers(2, 9))
    vocab = text_vocab([f"w{i}" for i in range(n_tokens)])
    params = EmbedderParams.initialize(vocab, dim, seed)
    params.w_dir[:] = rng.uniform(-0.6, 0.6, params.w_dir.shape)
    params.w_mag[:] = rng.uniform(0.3, 1.8, params.w_mag.shape)
    params.lam[:] = rng.uniform(0.4, 1.4, 2)
    return params, rng, n_tokens


def random_docs_for(rng, n_tokens):
    def sample(i, n_cit):
        toks = lambda: [
            f"w{t}" for t in rng.choice(n_tokens, size=int(rng.integers(1, 6)))
        ]
        return make_doc(f"d{i}", title=toks(), abstract=toks(), in_citations=n_cit)

    neg_type = ["random", "nearest_neighbor", "citation_of_citation"][int(rng.integers(3))]
    return Triplet(
        sample(0, int(rng.integers(0, 40))),
        sample(1, int(rng.integers(0, 40))),
        sample(2, int(rng.integers(0, 40))),
        neg_type,
    )


class TestCriterion1GradientFidelity:
    def test_both_models_match_finite_differences(self):
        with criterion(1, "gradient fidelity < 1e-4 over 20 seeds, < 10 s"):
            start = time.perf_counter()
            worst_embedder = 0.0
            worst_ranker = 0.0
            for seed in range(20):
                params, rng, n_tokens = random_embedder_model(seed)
                triplet = random_docs_for(rng, n_tokens)
                worst_embedder = max(worst_embedder, gradient_check(params, triplet, eps=1e-5))

                vocab = full_vocab(
                    [f"w{i}" for i in range(n_tokens)],
                    ["a0", "a1", "a2"], ["v0", "v1"], ["k0", "k1"],
                )
                hidden = int(rng.integers(2, 5))
                rparams = RankerParams.initialize(
                    vocab,
                    dim_text=int(rng.integers(2, 9)),
                    dim_meta=int(rng.integers(2, 5)),
                    hidden=hidden,
                    siamese=bool(seed % 2),
                    use_metadata=bool((seed // 2) % 2),
                    seed=seed,
                )
                rparams.w_cap[:] = rng.uniform(-0.3, 0.3, rparams.w_cap.shape)
                triplet2 = random_docs_for(rng, n_tokens)
                triplet2.query.authors = ["a0"]
                triplet2.positive.authors = ["a0", "a1"]
                triplet2.negative.venue = "v0"
                worst_ranker = max(
                    worst_ranker,
                    gradient_check_ranker(
                        rparams, triplet2,
                        float(rng.uniform(-0.5, 0.8)), float(rng.uniform(-0.5, 0.8)),
                        eps=1e-5,
                    ),
                )
            elapsed = time.perf_counter() - start
            assert worst_embedder < 1e-4, f"embedder gradient error {worst_embedder}"
            assert worst_ranker < 1e-4, f"ranker gradient error {worst_ranker}"
            assert elapsed < 10.0, f"gradient checks took {elapsed:.1f}s"


class TestCriterion2LossUnitValues:
    def test_margin_loss_worked_examples(self):
        with criterion(2, "margin-loss worked examples exact to 1e-9; boost(0) == 0.01"):
            assert triplet_loss(0.9, 0.2, "random", 0.01, 0.01, 1.0) == pytest.approx(
                0.0, abs=1e-9
            )
            assert triplet_loss(0.1, 0.2, "random", 0.01, 0.01, 1.0) == pytest.approx(
                0.4, abs=1e-9
            )
            assert triplet_loss(
                0.1, 0.2, "nearest_neighbor", 0.01, 0.01, 1.0
            ) == pytest.approx(0.3, abs=1e-9)
            assert boost(0) == 0.01


class TestCriterion3AnnOracle:
    def test_recall_and_bit_identity(self):
        with criterion(3, "ANN recall@10 >= 0.9 vs oracle; exhaustive mode bit-identical; < 30 s"):
            start = time.perf_counter()
            rng = np.random.default_rng(1234)
            vecs = rng.normal(size=(1000, 32))
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            emb = {f"v{i:04d}": vecs[i] for i in range(1000)}

            forest = build_index(emb, n_trees=50, leaf_capacity=32, seed=99)
            hits = 0
            for qi in range(100):
                q = rng.normal(size=32)
                q /= np.linalg.norm(q)
                approx = {i for i, _ in query_index(forest, q, 10, 20_000).items}
                exact = {i for i, _ in brute_force_knn(emb, q, 10)}
                hits += len(approx & exact)
            recall = hits / 1000.0
            assert recall >= 0.9, f"recall@10 = {recall}"

            exhaustive = build_index(emb, n_trees=10, leaf_capacity=1000, seed=3)
            q = rng.normal(size=32)
            assert query_index(exhaustive, q, 50, None).items == brute_force_knn(emb, q, 50)

            elapsed = time.perf_counter() - start
            assert elapsed < 30.0, f"build+query took {elapsed:.1f}s"


class TestCriterion4MetricExactness:
    def test_hand_fixtures(self):
        with criterion(4, "metric hand fixtures exact; BM25 hand case ln 2 +- 1e-6"):
            gold = {"q": {f"g{i}" for i in range(5)}}
            ranked = ["g0", "x1", "g1", "x2", "g2"] + [f"x{i}" for i in range(3, 18)]
            report = evaluate_run({"q": ranked}, gold)
            assert report.precision_at[20] == pytest.approx(0.15, abs=1e-12)
            assert report.recall_at[20] == pytest.approx(0.6, abs=1e-12)
            assert report.f1_at_20 == pytest.approx(0.24, abs=1e-12)

            assert mrr({"q1": ["a"], "q2": ["x", "b"]}, {"q1": {"a"}, "q2": {"b"}}) == 0.75

            store = CorpusStore(
                {
                    "d1": make_doc("d1", title=["term", "filler"]),
                    "d2": make_doc("d2", title=["other", "words"]),
                },
                IngestReport(),
            )
            index = Bm25Index.build(store)
            assert bm25_score(["term"], "d1", index) == pytest.approx(
                math.log(2.0), abs=1e-6
            )


class TestCriterion5ToyPipeline:
    def test_forced_embedding_candidates_and_rerank(self):
        with criterion(5, "toy pipeline: candidates exactly the 4 neighbors + 1 cited; rerank -> 3"):
            query, params, forest, store, _ = toy_pipeline()
            cset = select_candidates(query, params, forest, store, k_neighbors=4)
            assert set(cset.ids()) == {"d2", "d3", "d4", "d6", "d7"}

            rparams = RankerParams.initialize(
                params.vocab, dim_text=4, dim_meta=3, hidden=4, seed=0
            )
            top3 = rerank(query, cset, rparams, params, top_n=3, store=store)
            assert len(top3) == 3
            assert {doc_id for doc_id, _ in top3} <= set(cset.ids())


def e2e_config(seed=11):
    config = AppConfig()
    config.rng_seed = seed
    config.data.train_end_year = 2013
    config.data.dev_end_year = 2014
    config.data.min_papers_per_keyphrase = 1
    config.select.dense_dimension = 48
    config.select.learning_rate = 0.01
    config.select.epochs = 4
    config.select.word_dropout = 0.1
    config.select.number_ann_neighbors = 5
    config.rank.learning_rate = 0.01
    config.rank.epochs = 3
    config.rank.word_dropout = 0.1
    config.rank.metadata_dimension = 12
    config.rank.l2_regularization = 1e-4
    config.ann.n_trees = 40
    config.ann.training_n_trees = 8
    config.ann.training_search_budget = 600
    return config


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Trained two-phase pipeline on the clustered 2,000-document corpus."""
    tmp = tmp_path_factory.mktemp("e2e")
    start = time.perf_counter()
    records = synthetic_corpus(n_docs=2000, n_topics=20, seed=11)
    write_jsonl(records, tmp / "corpus.jsonl")
    config = e2e_config()
    store = workflows.run_ingest(tmp / "corpus.jsonl", tmp / "store", config)
    workflows.run_train_select(store, tmp / "art", config)
    workflows.run_build_index(store, tmp / "art", config)
    workflows.run_train_rank(store, tmp / "art", config)
    train_seconds = time.perf_counter() - start
    return {
        "tmp": tmp,
        "config": config,
        "store": store,
        "train_seconds": train_seconds,
    }


class TestCriterion6EndToEndLearning:
    def test_learning_signal_and_phase_ordering(self, pipeline):
        with criterion(6, "R@20 >= 3x random baseline; rerank MRR >= select MRR; < 5 min"):
            start = time.perf_counter()
            store = pipeline["store"]
            config = pipeline["config"]
            tmp = pipeline["tmp"]

            select_preds, gold = workflows.predictions_for_split(
                store, tmp / "art", config, split="test", mode="select_only"
            )
            select_report = evaluate_run(select_preds, gold)

            # Random-ranking baseline over the full candidate pool.
            rng = np.random.default_rng(1)
            all_ids = np.asarray(store.ids())
            random_preds = {}
            for qid in select_preds:
                perm = [i for i in map(str, rng.permutation(all_ids)[:200]) if i != qid]
                random_preds[qid] = perm
            random_report = evaluate_run(random_preds, gold)

            rerank_preds, _ = workflows.predictions_for_split(
                store, tmp / "art", config, split="test", mode="rerank"
            )
            rerank_mrr = mrr(rerank_preds, gold)
            select_mrr = mrr(select_preds, gold)

            elapsed = pipeline["train_seconds"] + (time.perf_counter() - start)
            print(
                f"\n  select R@20={select_report.recall_at[20]:.3f} "
                f"random R@20={random_report.recall_at[20]:.4f} "
                f"select MRR={select_mrr:.3f} rerank MRR={rerank_mrr:.3f} "
                f"runtime={elapsed:.0f}s"
            )
            assert select_report.recall_at[20] >= 3 * max(random_report.recall_at[20], 1e-9)
            assert rerank_mrr >= select_mrr
            assert elapsed < 300.0, f"end-to-end run took {elapsed:.0f}s"


class TestCriterion7SelfCitationDirection:
    def test_metadata_model_favors_shared_authors(self, tmp_path_factory):
        with criterion(7, "metadata ranker mean shared-author rank lower for n in {10, 50, 100}"):
            tmp = tmp_path_factory.mktemp("bias")
            records = synthetic_corpus(
                n_docs=1000, n_topics=10, seed=23,
                n_authors=60, author_citation_prob=0.5,
            )
            write_jsonl(records, tmp / "corpus.jsonl")
            config = e2e_config(seed=23)
            config.data.min_papers_per_author = 1
            config.select.epochs = 3
            config.rank.epochs = 3
            store = workflows.run_ingest(tmp / "corpus.jsonl", tmp / "store", config)
            workflows.run_train_select(store, tmp / "art", config)
            workflows.run_build_index(store, tmp / "art", config)
            workflows.run_train_rank(
                store, tmp / "art", config, checkpoint_name="ranker_meta.npz",
                use_metadata=True,
            )
            workflows.run_train_rank(
                store, tmp / "art", config, checkpoint_name="ranker_text.npz",
                use_metadata=False,
            )

            rows = {}
            for name in ("ranker_meta.npz", "ranker_text.npz"):
                preds, _ = workflows.predictions_for_split(
                    store, tmp / "art", config, split="test", mode="rerank",
                    ranker_name=name,
                )
                rows[name] = self_citation_stats(preds, store, n_values=(10, 50, 100))

            for meta_row, text_row in zip(rows["ranker_meta.npz"], rows["ranker_text.npz"]):
                print(
                    f"\n  n={meta_row.n}: metadata mean rank={meta_row.mean_rank:.2f} "
                    f"({meta_row.n_pairs} pairs) vs text-only={text_row.mean_rank:.2f} "
                    f"({text_row.n_pairs} pairs)"
                )
                assert meta_row.mean_rank is not None and text_row.mean_rank is not None
                assert meta_row.mean_rank < text_row.mean_rank


class TestCriterion8NeighborSweep:
    def test_four_row_report_with_monotone_latency(self, pipeline):
        with criterion(8, "sweep K in {1,5,10,50}: 4 rows, latency non-decreasing"):
            store = pipeline["store"]
            config = pipeline["config"]
            rows = workflows.run_sweep(
                store, pipeline["tmp"] / "art", config,
                k_values=[1, 5, 10, 50], split="dev", max_queries=200,
            )
            assert [r.k for r in rows] == [1, 5, 10, 50]
            latencies = [r.mean_latency_ms for r in rows]
            print("\n  latencies(ms):", [f"{v:.2f}" for v in latencies])
            assert latencies == sorted(latencies), f"latency not monotone: {latencies}"


class TestCriterion9ServiceContract:
    def test_http_recommendation_contract(self, pipeline):
        with criterion(9, "POST /recommend: k sorted results < 1 s; repeatable; rerank within select pool"):
            store = pipeline["store"]
            config = pipeline["config"]
            bundle = ArtifactBundle.load(pipeline["tmp"] / "art", pipeline["tmp"] / "store", config)
            client = TestClient(create_app(bundle))

            doc = store[store.eval_query_ids("test")[0]]
            payload = {
                "title": " ".join(doc.title),
                "abstract": " ".join(doc.abstract),
                "k": 20,
                "mode": "select_only",
            }
            start = time.perf_counter()
            response = client.post("/recommend", json=payload)
            elapsed = time.perf_counter() - start
            assert response.status_code == 200
            body = response.json()
            assert len(body["results"]) == 20
            scores = [r["score"] for r in body["results"]]
            assert scores == sorted(scores, reverse=True)
            assert elapsed < 1.0, f"request took {elapsed:.2f}s"

            repeat = client.post("/recommend", json=payload).json()
            assert [r["id"] for r in repeat["results"]] == [r["id"] for r in body["results"]]

            wide = client.post(
                "/recommend", json={**payload, "k": 500, "mode": "select_only"}
            ).json()
            reranked = client.post(
                "/recommend", json={**payload, "mode": "rerank"}
            ).json()
            select_pool = {r["id"] for r in wide["results"]}
            assert {r["id"] for r in reranked["results"]} <= select_pool
