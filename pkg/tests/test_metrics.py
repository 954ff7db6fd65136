import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citerec.corpus import CorpusStore, IngestReport
from citerec.metrics import evaluate_run, mrr, self_citation_stats

from conftest import make_doc


class TestEvaluateRun:
    def test_single_query_hand_values(self):
        gold = {"q": {f"g{i}" for i in range(5)}}
        ranked = ["g0", "x1", "g1", "x2", "g2"] + [f"x{i}" for i in range(3, 18)]
        report = evaluate_run({"q": ranked}, gold)
        assert report.precision_at[20] == pytest.approx(0.15, abs=1e-12)
        assert report.recall_at[20] == pytest.approx(0.6, abs=1e-12)
        assert report.f1_at_20 == pytest.approx(0.24, abs=1e-12)

    def test_perfect_prediction(self):
        gold = {"q": {f"g{i}" for i in range(20)}}
        report = evaluate_run({"q": [f"g{i}" for i in range(20)]}, gold)
        assert report.precision_at[20] == 1.0
        assert report.recall_at[20] == 1.0
        assert report.f1_at_20 == 1.0

    def test_macro_average_not_pooled(self):
        gold = {"q1": {"a"}, "q2": {"b"}}
        predictions = {
            "q1": ["a"] + [f"x{i}" for i in range(19)],
            "q2": [f"y{i}" for i in range(20)],
        }
        report = evaluate_run(predictions, gold)
        assert report.recall_at[20] == pytest.approx(0.5)
        assert report.precision_at[20] == pytest.approx(0.025)

    def test_query_without_gold_excluded_with_count(self, caplog):
        gold = {"q1": {"a"}}
        predictions = {"q1": ["a"], "q2": ["b"]}
        with caplog.at_level("WARNING"):
            report = evaluate_run(predictions, gold)
        assert report.n_queries == 1
        assert report.n_excluded == 1
        assert "excluded" in caplog.text

    def test_empty_run(self):
        report = evaluate_run({}, {})
        assert report.n_queries == 0
        assert report.f1_at_20 == 0.0

    def test_f1_between_p_and_r(self):
        gold = {"q": {"a", "b", "c"}}
        report = evaluate_run({"q": ["a", "x", "b"] + ["y"] * 17}, gold)
        low, high = sorted([report.precision_at[20], report.recall_at[20]])
        assert low <= report.f1_at_20 <= high

    @given(
        n_gold=st.integers(1, 10),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=50, deadline=None)
    def test_hit_counts_are_integers(self, n_gold, seed):
        import numpy as np

        rng = np.random.default_rng(seed)
        gold = {"q": {f"g{i}" for i in range(n_gold)}}
        pool = [f"g{i}" for i in range(n_gold)] + [f"x{i}" for i in range(30)]
        ranked = [str(x) for x in rng.permutation(pool)]
        report = evaluate_run({"q": ranked}, gold, k_values=(5, 10, 20))
        for k, p in report.precision_at.items():
            assert (p * k) == pytest.approx(round(p * k), abs=1e-9)
        for k, r in report.recall_at.items():
            assert (r * n_gold) == pytest.approx(round(r * n_gold), abs=1e-9)


class TestMrr:
    def test_first_hit_at_rank_one(self):
        assert mrr({"q": ["a", "b"]}, {"q": {"a"}}) == 1.0

    def test_first_hit_at_rank_four(self):
        assert mrr({"q": ["x", "y", "z", "a"]}, {"q": {"a"}}) == 0.25

    def test_mean_over_queries(self):
        predictions = {"q1": ["a"], "q2": ["x", "b"]}
        gold = {"q1": {"a"}, "q2": {"b"}}
        assert mrr(predictions, gold) == 0.75

    def test_absent_gold_scores_zero(self):
        assert mrr({"q": ["x", "y"]}, {"q": {"a"}}) == 0.0

    def test_invariant_below_first_hit(self):
        gold = {"q": {"a"}}
        base = mrr({"q": ["x", "a", "p", "r"]}, gold)
        permuted = mrr({"q": ["x", "a", "r", "p"]}, gold)
        assert base == permuted


class TestSelfCitationStats:
    def store(self):
        docs = [
            make_doc("q", authors=["ann", "bob"]),
            make_doc("r1", authors=["carol"]),
            make_doc("r2", authors=["dave"]),
            make_doc("r3", authors=["ann"]),
            make_doc("r4", authors=["eve"]),
        ]
        return CorpusStore({d.id: d for d in docs}, IngestReport())

    def test_single_shared_author_at_rank_three(self):
        predictions = {"q": ["r1", "r2", "r3", "r4"]}
        rows = self_citation_stats(predictions, self.store(), n_values=(10,))
        assert rows[0].mean_rank == 3
        assert rows[0].max_rank == 3
        assert rows[0].n_pairs == 1

    def test_cutoff_excludes_deep_ranks(self):
        predictions = {"q": ["r1", "r2", "r3", "r4"]}
        rows = self_citation_stats(predictions, self.store(), n_values=(2,))
        assert rows[0].mean_rank is None
        assert rows[0].n_pairs == 0

    def test_no_shared_authors_gives_null_row(self):
        predictions = {"q": ["r1", "r2", "r4"]}
        rows = self_citation_stats(predictions, self.store(), n_values=(10, 50))
        assert all(r.mean_rank is None and r.max_rank is None for r in rows)

    def test_pooled_over_queries(self):
        docs = [
            make_doc("q1", authors=["ann"]),
            make_doc("q2", authors=["bob"]),
            make_doc("a", authors=["ann"]),
            make_doc("b", authors=["bob"]),
            make_doc("x", authors=["zed"]),
        ]
        store = CorpusStore({d.id: d for d in docs}, IngestReport())
        predictions = {"q1": ["a", "x"], "q2": ["x", "b"]}
        rows = self_citation_stats(predictions, store, n_values=(5,))
        assert rows[0].n_pairs == 2
        assert rows[0].mean_rank == 1.5  # ranks 1 and 2
        assert rows[0].max_rank == 2


class TestReportFormatting:
    def test_table_and_json(self):
        gold = {"q": {"a", "b"}}
        report = evaluate_run({"q": ["a", "x", "b"]}, gold, k_values=(10, 20))
        table = report.format_table()
        assert "P@10" in table and "F1@20" in table and "MRR" in table
        payload = report.to_json()
        assert '"f1_at_20"' in payload
