"""Corpus ingestion, normalization, year-based splits, and vocabularies."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path

logger = logging.getLogger(__name__)

MAX_TITLE_TOKENS = 50
MAX_ABSTRACT_TOKENS = 500
MAX_AUTHORS = 8
MAX_KEYPHRASES = 20

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class CorpusError(ValueError):
    """Malformed corpus input (bad line, duplicate id, missing field)."""


class ConfigError(ValueError):
    """Invalid configuration value (bad cap, inverted year bounds, ...)."""


def tokenize(text: str, max_len: int | None = None) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, truncate to ``max_len`` tokens.

    Underscores count as separators. Empty input yields an empty list.
    Idempotent on its own (space-joined) output.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    if max_len is not None:
        tokens = tokens[:max_len]
    return tokens


@dataclass
class Document:
    """One scholarly record, normalized for the recommendation pipeline.

    ``title`` and ``abstract`` are token sequences; ``raw_title`` keeps the
    original string for display. ``in_citation_count`` is derived at ingest
    from the other documents' ``out_citations`` lists, never read from input.
    """

    id: str
    title: list[str]
    abstract: list[str]
    authors: list[str] = field(default_factory=list)
    venue: str = ""
    keyphrases: list[str] = field(default_factory=list)
    year: int = 0
    out_citations: list[str] = field(default_factory=list)
    in_citation_count: int = 0
    raw_title: str = ""

    def text_types(self) -> set[str]:
        """Unique word types over title + abstract."""
        return set(self.title) | set(self.abstract)


@dataclass
class IngestReport:
    n_documents: int = 0
    n_edges: int = 0
    n_pruned_edges: int = 0
    n_self_edges: int = 0
    n_duplicate_edges: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


TRAIN, DEV, TEST = "train", "dev", "test"


class CorpusStore:
    """Immutable-after-ingest container of documents plus split assignment."""

    def __init__(self, documents: dict[str, Document], report: IngestReport | None = None):
        self.documents = documents
        self.report = report or IngestReport(n_documents=len(documents))
        self.splits: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.documents

    def __getitem__(self, doc_id: str) -> Document:
        return self.documents[doc_id]

    def ids(self) -> list[str]:
        return list(self.documents)

    def split_ids(self, split: str) -> list[str]:
        return [i for i, s in self.splits.items() if s == split]

    def eval_query_ids(self, split: str, min_citations: int = 1) -> list[str]:
        """Documents of ``split`` usable as evaluation queries.

        Documents with fewer than ``min_citations`` in-corpus outgoing
        citations are excluded from query sets but stay in the candidate pool.
        """
        return [
            i for i in self.split_ids(split)
            if len(self.documents[i].out_citations) >= min_citations
        ]

    def recount_in_citations(self) -> dict[str, int]:
        """Brute-force recount of incoming citations (testing oracle)."""
        counts = {i: 0 for i in self.documents}
        for doc in self.documents.values():
            for cited in doc.out_citations:
                counts[cited] += 1
        return counts

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "documents.jsonl", "w", encoding="utf-8") as fh:
            for doc in self.documents.values():
                fh.write(json.dumps(asdict(doc), ensure_ascii=False) + "\n")
        with open(directory / "report.json", "w", encoding="utf-8") as fh:
            json.dump(self.report.to_dict(), fh, indent=2)
        if self.splits:
            with open(directory / "splits.json", "w", encoding="utf-8") as fh:
                json.dump(self.splits, fh)

    @classmethod
    def load(cls, directory: str | Path) -> "CorpusStore":
        directory = Path(directory)
        documents: dict[str, Document] = {}
        with open(directory / "documents.jsonl", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                documents[rec["id"]] = Document(**rec)
        report = IngestReport()
        report_path = directory / "report.json"
        if report_path.exists():
            report = IngestReport(**json.loads(report_path.read_text()))
        store = cls(documents, report)
        splits_path = directory / "splits.json"
        if splits_path.exists():
            store.splits = json.loads(splits_path.read_text())
        return store


def _normalize_record(rec: dict, line_no: int) -> Document:
    for key in ("id", "title", "abstract"):
        if key not in rec:
            raise CorpusError(f"line {line_no}: missing required field {key!r}")
    authors = [a.strip() for a in rec.get("authors", []) if a and a.strip()]
    keyphrases = [k.strip() for k in rec.get("keyphrases", []) if k and k.strip()]
    raw_title = str(rec["title"])
    return Document(
        id=str(rec["id"]),
        title=tokenize(raw_title, MAX_TITLE_TOKENS),
        abstract=tokenize(str(rec["abstract"]), MAX_ABSTRACT_TOKENS),
        authors=authors[:MAX_AUTHORS],
        venue=str(rec.get("venue", "") or ""),
        keyphrases=keyphrases[:MAX_KEYPHRASES],
        year=int(rec.get("year", 0) or 0),
        out_citations=[str(c) for c in rec.get("out_citations", [])],
        raw_title=raw_title,
    )


def ingest_jsonl(path: str | Path) -> CorpusStore:
    """Read one JSON document per line, normalize, prune dangling citations.

    Raises :class:`CorpusError` naming the offending line for malformed JSON
    and naming the id for duplicates. Self-citations and repeated edges are
    dropped and tallied in the report; citations of unknown documents are
    pruned (real corpora are incomplete).
    """
    documents: dict[str, Document] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise CorpusError(f"line {line_no}: expected a JSON object")
            doc = _normalize_record(rec, line_no)
            if doc.id in documents:
                raise CorpusError(f"duplicate document id {doc.id!r} at line {line_no}")
            documents[doc.id] = doc

    report = IngestReport(n_documents=len(documents))
    for doc in documents.values():
        kept: list[str] = []
        seen: set[str] = set()
        for cited in doc.out_citations:
            if cited == doc.id:
                report.n_self_edges += 1
            elif cited in seen:
                report.n_duplicate_edges += 1
            elif cited not in documents:
                report.n_pruned_edges += 1
            else:
                kept.append(cited)
                seen.add(cited)
        doc.out_citations = kept
        report.n_edges += len(kept)

    for doc in documents.values():
        doc.in_citation_count = 0
    for doc in documents.values():
        for cited in doc.out_citations:
            documents[cited].in_citation_count += 1

    return CorpusStore(documents, report)


def split_by_year(store: CorpusStore, train_end: int, dev_end: int) -> CorpusStore:
    """Assign train/dev/test by publication year: train <= train_end < dev <= dev_end < test."""
    if train_end >= dev_end:
        raise ConfigError(f"train_end ({train_end}) must be < dev_end ({dev_end})")
    splits: dict[str, str] = {}
    for doc_id, doc in store.documents.items():
        if doc.year <= train_end:
            splits[doc_id] = TRAIN
        elif doc.year <= dev_end:
            splits[doc_id] = DEV
        else:
            splits[doc_id] = TEST
    store.splits = splits
    for name in (DEV, TEST):
        if not any(s == name for s in splits.values()):
            logger.warning("split %r is empty (train_end=%d, dev_end=%d)", name, train_end, dev_end)
    return store


@dataclass
class VocabularyConfig:
    text_cap: int = 200_000
    min_papers_per_author: int = 1
    min_papers_per_venue: int = 1
    min_papers_per_keyphrase: int = 5


class Vocabulary:
    """Token-to-id tables for text and categorical fields, with document frequencies.

    Text vocabulary is shared by title and abstract: the top ``text_cap``
    tokens by document frequency over the train split, ties broken
    lexicographically. Categorical vocabularies keep entries appearing in at
    least the configured number of train documents.
    """

    def __init__(
        self,
        text: dict[str, int],
        authors: dict[str, int],
        venues: dict[str, int],
        keyphrases: dict[str, int],
        text_df: dict[str, int],
    ):
        self.text = text
        self.authors = authors
        self.venues = venues
        self.keyphrases = keyphrases
        self.text_df = text_df

    def __len__(self) -> int:
        return len(self.text)

    def text_ids(self, tokens) -> list[int]:
        """Ids of unique in-vocabulary word types, sorted for determinism."""
        ids = {self.text[t] for t in tokens if t in self.text}
        return sorted(ids)

    def content_hash(self) -> str:
        """Stable digest binding parameter checkpoints to this vocabulary."""
        blob = json.dumps(
            [sorted(self.text.items()), sorted(self.authors.items()),
             sorted(self.venues.items()), sorted(self.keyphrases.items())],
            ensure_ascii=False,
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "authors": self.authors,
            "venues": self.venues,
            "keyphrases": self.keyphrases,
            "text_df": self.text_df,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(
            text=data["text"],
            authors=data["authors"],
            venues=data["venues"],
            keyphrases=data["keyphrases"],
            text_df=data["text_df"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_vocabulary(store: CorpusStore, config: VocabularyConfig | None = None) -> Vocabulary:
    """Build vocabularies from the train split (whole corpus when unsplit)."""
    config = config or VocabularyConfig()
    if config.text_cap <= 0:
        raise ConfigError(f"text vocabulary cap must be positive, got {config.text_cap}")
    if not store.documents:
        raise CorpusError("cannot build a vocabulary from an empty corpus")

    train_ids = store.split_ids(TRAIN) if store.splits else store.ids()
    text_df: Counter[str] = Counter()
    author_df: Counter[str] = Counter()
    venue_df: Counter[str] = Counter()
    keyphrase_df: Counter[str] = Counter()
    for doc_id in train_ids:
        doc = store.documents[doc_id]
        text_df.update(doc.text_types())
        author_df.update(set(doc.authors))
        if doc.venue:
            venue_df[doc.venue] += 1
        keyphrase_df.update(set(doc.keyphrases))

    # Highest document frequency first; lexicographic tie-break keeps builds reproducible.
    ranked = sorted(text_df.items(), key=lambda kv: (-kv[1], kv[0]))[: config.text_cap]
    text = {token: idx for idx, (token, _) in enumerate(ranked)}

    def categorical(df: Counter[str], threshold: int) -> dict[str, int]:
        kept = sorted(t for t, n in df.items() if n >= threshold)
        return {t: i for i, t in enumerate(kept)}

    return Vocabulary(
        text=text,
        authors=categorical(author_df, config.min_papers_per_author),
        venues=categorical(venue_df, config.min_papers_per_venue),
        keyphrases=categorical(keyphrase_df, config.min_papers_per_keyphrase),
        text_df={t: text_df[t] for t in text},
    )
