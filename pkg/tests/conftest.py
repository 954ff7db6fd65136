"""Shared fixtures and document factories."""

from __future__ import annotations

import numpy as np
import pytest

from citerec.corpus import Document, Vocabulary


def make_doc(
    doc_id: str,
    title: list[str] | None = None,
    abstract: list[str] | None = None,
    authors: list[str] | None = None,
    venue: str = "",
    keyphrases: list[str] | None = None,
    year: int = 2010,
    out_citations: list[str] | None = None,
    in_citations: int = 0,
) -> Document:
    return Document(
        id=doc_id,
        title=title or [],
        abstract=abstract or [],
        authors=authors or [],
        venue=venue,
        keyphrases=keyphrases or [],
        year=year,
        out_citations=out_citations or [],
        in_citation_count=in_citations,
    )


def text_vocab(tokens: list[str]) -> Vocabulary:
    return Vocabulary(
        text={t: i for i, t in enumerate(tokens)},
        authors={},
        venues={},
        keyphrases={},
        text_df={t: 1 for t in tokens},
    )


def full_vocab(
    tokens: list[str], authors: list[str], venues: list[str], keyphrases: list[str]
) -> Vocabulary:
    return Vocabulary(
        text={t: i for i, t in enumerate(tokens)},
        authors={a: i for i, a in enumerate(authors)},
        venues={v: i for i, v in enumerate(venues)},
        keyphrases={k: i for i, k in enumerate(keyphrases)},
        text_df={t: 1 for t in tokens},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
