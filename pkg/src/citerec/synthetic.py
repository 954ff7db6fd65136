"""Seeded synthetic corpora: topic clusters, backward-in-time citations,
and an optional author-citation correlation for bias experiments."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def synthetic_corpus(
    n_docs: int = 2000,
    n_topics: int = 20,
    seed: int = 0,
    topic_vocab_size: int = 50,
    shared_vocab_size: int = 100,
    title_len: int = 6,
    abstract_len: int = 40,
    topic_token_prob: float = 0.85,
    year_start: int = 2008,
    year_end: int = 2016,
    citations_mean: float = 5.0,
    min_citations: int = 2,
    max_citations: int = 10,
    cross_topic_prob: float = 0.05,
    n_authors: int = 0,
    author_citation_prob: float = 0.0,
) -> list[dict]:
    """Generate raw JSONL-ready records with intra-topic citation structure.

    Documents are assigned topics round-robin and years monotonically in the
    document index, so citations (which always point to earlier documents)
    never run forward in time. With ``n_authors > 0`` each author works in
    two topics and ``author_citation_prob`` of citations target an earlier
    document by one of the citing document's authors regardless of topic,
    which plants the shared-author signal the bias analysis looks for.
    """
    rng = np.random.default_rng(seed)
    topic_vocab = [
        [f"topic{t:02d}term{j:03d}" for j in range(topic_vocab_size)]
        for t in range(n_topics)
    ]
    shared_vocab = [f"common{j:03d}" for j in range(shared_vocab_size)]
    topic_keyphrases = [
        [f"topic{t:02d}phrase{j}" for j in range(4)] for t in range(n_topics)
    ]

    authors_by_topic: list[list[str]] = [[] for _ in range(n_topics)]
    if n_authors > 0:
        for a in range(n_authors):
            name = f"author{a:03d}"
            authors_by_topic[a % n_topics].append(name)
            authors_by_topic[(a * 3 + 1) % n_topics].append(name)

    docs_by_author: dict[str, list[int]] = {}
    docs_by_topic: list[list[int]] = [[] for _ in range(n_topics)]
    records: list[dict] = []
    year_span = year_end - year_start + 1

    for i in range(n_docs):
        topic = i % n_topics
        year = year_start + (i * year_span) // n_docs
        title_tokens = [
            topic_vocab[topic][int(rng.integers(topic_vocab_size))]
            for _ in range(title_len)
        ]
        abstract_tokens = [
            topic_vocab[topic][int(rng.integers(topic_vocab_size))]
            if rng.random() < topic_token_prob
            else shared_vocab[int(rng.integers(shared_vocab_size))]
            for _ in range(abstract_len)
        ]

        authors: list[str] = []
        if n_authors > 0 and authors_by_topic[topic]:
            pool = authors_by_topic[topic]
            count = min(int(rng.integers(1, 3)), len(pool))
            authors = [str(a) for a in rng.choice(pool, size=count, replace=False)]

        n_cite = int(np.clip(rng.poisson(citations_mean), min_citations, max_citations))
        targets: set[int] = set()
        own_earlier = [
            d for a in authors for d in docs_by_author.get(a, []) if d < i
        ]
        same_topic_earlier = docs_by_topic[topic]
        for _ in range(n_cite * 4):
            if len(targets) >= n_cite:
                break
            roll = rng.random()
            if own_earlier and roll < author_citation_prob:
                targets.add(own_earlier[int(rng.integers(len(own_earlier)))])
            elif i > 0 and roll < author_citation_prob + cross_topic_prob:
                targets.add(int(rng.integers(i)))
            elif same_topic_earlier:
                targets.add(
                    same_topic_earlier[int(rng.integers(len(same_topic_earlier)))]
                )

        records.append(
            {
                "id": f"d{i:05d}",
                "title": " ".join(title_tokens),
                "abstract": " ".join(abstract_tokens),
                "authors": authors,
                "venue": f"venue{topic:02d}",
                "keyphrases": [
                    str(k)
                    for k in rng.choice(topic_keyphrases[topic], size=2, replace=False)
                ],
                "year": year,
                "out_citations": sorted(f"d{t:05d}" for t in targets),
            }
        )
        docs_by_topic[topic].append(i)
        for a in authors:
            docs_by_author.setdefault(a, []).append(i)

    return records


def write_jsonl(records: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path
