import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citerec.corpus import (
    ConfigError,
    CorpusError,
    CorpusStore,
    VocabularyConfig,
    build_vocabulary,
    ingest_jsonl,
    split_by_year,
    tokenize,
)


def write_corpus(tmp_path, records, name="corpus.jsonl"):
    path = tmp_path / name
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def rec(doc_id, title="a title", abstract="an abstract", **kw):
    return {"id": doc_id, "title": title, "abstract": abstract, **kw}


class TestTokenize:
    def test_lowercase_and_split(self):
        assert tokenize("Content-Based Citation Recommendation!") == [
            "content", "based", "citation", "recommendation",
        ]

    def test_empty(self):
        assert tokenize("") == []

    def test_truncation(self):
        text = " ".join(f"w{i}" for i in range(60))
        assert tokenize(text, 50) == [f"w{i}" for i in range(50)]

    def test_underscore_is_a_separator(self):
        assert tokenize("foo_bar baz") == ["foo", "bar", "baz"]

    @given(st.text(max_size=200))
    def test_idempotent(self, text):
        once = tokenize(text)
        assert tokenize(" ".join(once)) == once

    @given(st.text(max_size=200))
    def test_tokens_are_lowercase_alnum(self, text):
        for token in tokenize(text):
            assert token == token.lower()
            assert token


class TestIngest:
    def test_dangling_citation_pruned(self, tmp_path):
        path = write_corpus(
            tmp_path,
            [
                rec("A", out_citations=["B", "X"]),
                rec("B"),
                rec("C"),
            ],
        )
        store = ingest_jsonl(path)
        assert len(store) == 3
        assert store["A"].out_citations == ["B"]
        assert store.report.n_pruned_edges == 1

    def test_in_citation_count(self, tmp_path):
        path = write_corpus(
            tmp_path,
            [
                rec("A", out_citations=["B"]),
                rec("B"),
                rec("C", out_citations=["B"]),
            ],
        )
        store = ingest_jsonl(path)
        assert store["B"].in_citation_count == 2
        assert store["A"].in_citation_count == 0

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        store = ingest_jsonl(path)
        assert len(store) == 0
        assert store.report.n_documents == 0
        assert store.report.n_edges == 0

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(rec("A")) + "\nnot json\n")
        with pytest.raises(CorpusError, match="line 2"):
            ingest_jsonl(path)

    def test_duplicate_id_names_id(self, tmp_path):
        path = write_corpus(tmp_path, [rec("A"), rec("A")])
        with pytest.raises(CorpusError, match="'A'"):
            ingest_jsonl(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "missing.jsonl"
        path.write_text(json.dumps({"id": "A", "title": "t"}) + "\n")
        with pytest.raises(CorpusError, match="abstract"):
            ingest_jsonl(path)

    def test_self_citation_dropped(self, tmp_path):
        path = write_corpus(tmp_path, [rec("A", out_citations=["A", "B"]), rec("B")])
        store = ingest_jsonl(path)
        assert store["A"].out_citations == ["B"]
        assert store.report.n_self_edges == 1

    def test_duplicate_edges_dropped(self, tmp_path):
        path = write_corpus(tmp_path, [rec("A", out_citations=["B", "B"]), rec("B")])
        store = ingest_jsonl(path)
        assert store["A"].out_citations == ["B"]
        assert store.report.n_duplicate_edges == 1

    def test_normalization_caps(self, tmp_path):
        path = write_corpus(
            tmp_path,
            [
                rec(
                    "A",
                    title=" ".join(f"t{i}" for i in range(80)),
                    abstract=" ".join(f"a{i}" for i in range(600)),
                    authors=[f"author {i}" for i in range(12)],
                    keyphrases=[f"kp{i}" for i in range(30)],
                )
            ],
        )
        doc = ingest_jsonl(path)["A"]
        assert len(doc.title) == 50
        assert len(doc.abstract) == 500
        assert len(doc.authors) == 8
        assert len(doc.keyphrases) == 20

    def test_in_citation_count_matches_brute_force_recount(self, tmp_path, rng):
        n = 40
        records = []
        for i in range(n):
            cites = [f"d{j}" for j in rng.choice(n, size=5) if j != i]
            records.append(rec(f"d{i}", out_citations=cites))
        store = ingest_jsonl(write_corpus(tmp_path, records))
        recount = store.recount_in_citations()
        for doc_id, doc in store.documents.items():
            assert doc.in_citation_count == recount[doc_id]

    def test_save_load_round_trip(self, tmp_path):
        path = write_corpus(
            tmp_path,
            [rec("A", out_citations=["B"], year=2012), rec("B", year=2010)],
        )
        store = ingest_jsonl(path)
        split_by_year(store, 2011, 2013)
        store.save(tmp_path / "store")
        loaded = CorpusStore.load(tmp_path / "store")
        assert loaded.documents == store.documents
        assert loaded.splits == store.splits
        assert loaded.report == store.report


class TestVocabulary:
    def test_top_by_frequency(self, tmp_path):
        records = [rec(f"d{i}", title="neural", abstract="") for i in range(10)]
        records.append(rec("x", title="rare", abstract=""))
        store = ingest_jsonl(write_corpus(tmp_path, records))
        vocab = build_vocabulary(store, VocabularyConfig(text_cap=1))
        assert set(vocab.text) == {"neural"}
        assert vocab.text_df["neural"] == 10

    def test_tie_break_lexicographic(self, tmp_path):
        store = ingest_jsonl(write_corpus(tmp_path, [rec("d0", title="zeta alpha", abstract="")]))
        vocab = build_vocabulary(store, VocabularyConfig(text_cap=1))
        assert set(vocab.text) == {"alpha"}

    def test_author_threshold(self, tmp_path):
        records = [rec(f"d{i}", authors=["prolific"]) for i in range(10)]
        records.append(rec("x", authors=["one timer"]))
        store = ingest_jsonl(write_corpus(tmp_path, records))
        vocab = build_vocabulary(store, VocabularyConfig(min_papers_per_author=10))
        assert "prolific" in vocab.authors
        assert "one timer" not in vocab.authors

    def test_cap_must_be_positive(self, tmp_path):
        store = ingest_jsonl(write_corpus(tmp_path, [rec("A")]))
        with pytest.raises(ConfigError):
            build_vocabulary(store, VocabularyConfig(text_cap=0))

    def test_empty_corpus_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(CorpusError):
            build_vocabulary(ingest_jsonl(path))

    def test_built_from_train_split_only(self, tmp_path):
        store = ingest_jsonl(
            write_corpus(
                tmp_path,
                [rec("A", title="early", year=2010), rec("B", title="late", year=2016)],
            )
        )
        split_by_year(store, 2014, 2015)
        vocab = build_vocabulary(store)
        assert "early" in vocab.text
        assert "late" not in vocab.text

    def test_content_hash_changes_with_vocab(self, tmp_path):
        store = ingest_jsonl(write_corpus(tmp_path, [rec("A", title="alpha beta")]))
        v1 = build_vocabulary(store, VocabularyConfig(text_cap=1))
        v2 = build_vocabulary(store, VocabularyConfig(text_cap=2))
        assert v1.content_hash() != v2.content_hash()


class TestSplitByYear:
    def test_year_boundaries(self, tmp_path):
        records = [rec(f"d{y}", year=y) for y in (2013, 2014, 2015, 2016)]
        store = split_by_year(ingest_jsonl(write_corpus(tmp_path, records)), 2014, 2015)
        assert store.splits == {
            "d2013": "train", "d2014": "train", "d2015": "dev", "d2016": "test",
        }

    def test_zero_citation_test_doc_excluded_from_queries(self, tmp_path):
        records = [
            rec("old", year=2010),
            rec("cited", year=2011),
            rec("q", year=2016, out_citations=["cited"]),
            rec("lurker", year=2016),
        ]
        store = split_by_year(ingest_jsonl(write_corpus(tmp_path, records)), 2014, 2015)
        assert store.eval_query_ids("test") == ["q"]
        assert "lurker" in store.split_ids("test")  # still a candidate

    def test_all_train_with_warning(self, tmp_path, caplog):
        records = [rec(f"d{i}", year=2010) for i in range(3)]
        store = ingest_jsonl(write_corpus(tmp_path, records))
        with caplog.at_level("WARNING"):
            split_by_year(store, 2014, 2015)
        assert all(s == "train" for s in store.splits.values())
        assert "empty" in caplog.text

    def test_inverted_bounds_rejected(self, tmp_path):
        store = ingest_jsonl(write_corpus(tmp_path, [rec("A", year=2010)]))
        with pytest.raises(ConfigError):
            split_by_year(store, 2015, 2015)

    @given(
        years=st.lists(st.integers(min_value=2000, max_value=2020), min_size=1, max_size=30)
    )
    @settings(max_examples=50, deadline=None)
    def test_partition_and_monotone_boundary(self, tmp_path_factory, years):
        tmp_path = tmp_path_factory.mktemp("split")
        records = [rec(f"d{i}", year=y) for i, y in enumerate(years)]
        store = split_by_year(ingest_jsonl(write_corpus(tmp_path, records)), 2008, 2014)
        assert set(store.splits) == set(store.documents)
        train_years = [store[d].year for d in store.split_ids("train")]
        dev_years = [store[d].year for d in store.split_ids("dev")]
        test_years = [store[d].year for d in store.split_ids("test")]
        if train_years and dev_years:
            assert max(train_years) < min(dev_years)
        if dev_years and test_years:
            assert max(dev_years) < min(test_years)
        if train_years and test_years:
            assert max(train_years) < min(test_years)
