"""Recommendation serving: loaded artifact bundle, pure request handler, HTTP app.

The bundle of artifacts (corpus, vocabulary, model checkpoints, neighbor
forest, BM25 index) is immutable once loaded; request handling never mutates
it, so concurrent requests are safe and a hot reload is a single attribute
swap. Query documents are embedded on the fly and never join the corpus, so
serving new drafts requires no retraining or re-indexing.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .ann import AnnForest
from .bm25 import Bm25Index, bm25_rank
from .config import AppConfig
from .corpus import CorpusStore, Document, Vocabulary, tokenize
from .embedder import EmbedderParams
from .ranker import RankerParams, rerank
from .select import UnembeddableQueryError, select_candidates

MODES = ("select_only", "rerank", "bm25")


class RequestError(ValueError):
    """Invalid recommendation request; ``status`` is the HTTP-style code."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class RecommendRequest:
    title: str = ""
    abstract: str = ""
    authors: list[str] = dataclass_field(default_factory=list)
    venue: str = ""
    keyphrases: list[str] = dataclass_field(default_factory=list)
    k: int = 20
    mode: str = "rerank"

    @classmethod
    def from_mapping(cls, data: dict, default_k: int, max_k: int) -> "RecommendRequest":
        if not isinstance(data, dict):
            raise RequestError(400, "request body must be a JSON object")
        req = cls(
            title=str(data.get("title", "") or ""),
            abstract=str(data.get("abstract", "") or ""),
            authors=[str(a) for a in data.get("authors", [])],
            venue=str(data.get("venue", "") or ""),
            keyphrases=[str(k) for k in data.get("keyphrases", [])],
            k=int(data.get("k", default_k)),
            mode=str(data.get("mode", "rerank")),
        )
        req.validate(max_k)
        return req

    def validate(self, max_k: int = 500) -> None:
        if not self.title.strip() and not self.abstract.strip():
            raise RequestError(400, "title or abstract must be nonempty")
        if not 1 <= self.k <= max_k:
            raise RequestError(400, f"k must be between 1 and {max_k}")
        if self.mode not in MODES:
            raise RequestError(400, f"mode must be one of {', '.join(MODES)}")


@dataclass
class RecommendResponse:
    results: list[dict]
    model_version: str
    timing_ms: float

    def to_dict(self) -> dict:
        return {
            "results": self.results,
            "model_version": self.model_version,
            "timing_ms": self.timing_ms,
        }


class ArtifactBundle:
    """Everything the service needs, held in memory."""

    def __init__(
        self,
        store: CorpusStore,
        vocab: Vocabulary,
        eparams: EmbedderParams,
        forest: AnnForest,
        rparams: RankerParams | None = None,
        bm25_index: Bm25Index | None = None,
        config: AppConfig | None = None,
        model_version: str = "dev",
    ):
        self.store = store
        self.vocab = vocab
        self.eparams = eparams
        self.forest = forest
        self.rparams = rparams
        self.bm25_index = bm25_index
        self.config = config or AppConfig()
        self.model_version = model_version

    @classmethod
    def load(
        cls,
        artifacts_dir: str | Path,
        store_dir: str | Path | None = None,
        config: AppConfig | None = None,
    ) -> "ArtifactBundle":
        artifacts_dir = Path(artifacts_dir)
        store = CorpusStore.load(store_dir or artifacts_dir / "store")
        vocab = Vocabulary.load(artifacts_dir / "vocab.json")
        eparams = EmbedderParams.load(artifacts_dir / "embedder.npz", vocab)
        forest = AnnForest.load(artifacts_dir / "forest.ann")
        rparams = None
        ranker_path = artifacts_dir / "ranker.npz"
        if ranker_path.exists():
            rparams = RankerParams.load(ranker_path, vocab)
        bm25_index = None
        bm25_path = artifacts_dir / "bm25.json"
        if bm25_path.exists():
            bm25_index = Bm25Index.load(bm25_path)
        digest = hashlib.sha256()
        for name in ("embedder.npz", "ranker.npz", "forest.ann"):
            p = artifacts_dir / name
            if p.exists():
                digest.update(p.read_bytes())
        return cls(
            store, vocab, eparams, forest, rparams, bm25_index, config,
            model_version=digest.hexdigest()[:12],
        )


def _request_document(req: RecommendRequest, bundle: ArtifactBundle) -> Document:
    data = bundle.config.data
    return Document(
        id="__query__",
        title=tokenize(req.title, data.max_title_length),
        abstract=tokenize(req.abstract, data.max_abstract_length),
        authors=req.authors[: data.max_authors_per_document],
        venue=req.venue,
        keyphrases=req.keyphrases[: data.max_keyphrases_per_document],
        raw_title=req.title,
    )


def _result_row(bundle: ArtifactBundle, doc_id: str, score: float, origin: str) -> dict:
    doc = bundle.store[doc_id]
    return {
        "id": doc_id,
        "title": doc.raw_title or " ".join(doc.title),
        "year": doc.year,
        "venue": doc.venue,
        "score": score,
        "origin": origin,
    }


def recommend(req: RecommendRequest, bundle: ArtifactBundle) -> RecommendResponse:
    """Run the requested pipeline mode for an ephemeral query document."""
    req.validate(bundle.config.service.max_k)
    start = time.perf_counter()
    query = _request_document(req, bundle)

    if req.mode == "bm25":
        if bundle.bm25_index is None:
            raise RequestError(400, "BM25 index is not loaded")
        ranked = bm25_rank(
            query, bundle.bm25_index, top_n=req.k,
            n_key_terms=bundle.config.bm25.key_term_count,
        )
        results = [_result_row(bundle, i, s, "bm25") for i, s in ranked]
        return RecommendResponse(
            results, bundle.model_version, 1000.0 * (time.perf_counter() - start)
        )

    # Fetch enough neighbors that the candidate pool can fill k results.
    k_neighbors = max(bundle.config.select.number_ann_neighbors, req.k)
    try:
        candidates = select_candidates(
            query, bundle.eparams, bundle.forest, bundle.store, k_neighbors,
            search_budget=bundle.config.ann.search_budget,
        )
    except UnembeddableQueryError as exc:
        raise RequestError(422, f"query has no in-vocabulary text: {exc}") from exc

    if req.mode == "select_only":
        rows = [
            _result_row(bundle, c.id, c.score, c.origin)
            for c in candidates.candidates[: req.k]
        ]
    else:
        if bundle.rparams is None:
            raise RequestError(400, "reranker checkpoint is not loaded")
        origin_by_id = {c.id: c.origin for c in candidates.candidates}
        ranked = rerank(
            query, candidates, bundle.rparams, bundle.eparams, req.k, bundle.store
        )
        rows = [_result_row(bundle, i, p, origin_by_id[i]) for i, p in ranked]
    return RecommendResponse(
        rows, bundle.model_version, 1000.0 * (time.perf_counter() - start)
    )


def create_app(bundle: ArtifactBundle) -> FastAPI:
    """FastAPI app over one artifact bundle.

    The bundle lives in ``app.state.bundle``; replacing that attribute swaps
    every artifact atomically for subsequent requests.
    """
    app = FastAPI(title="citerec", version="0.1.0")
    app.state.bundle = bundle

    @app.post("/recommend")
    async def recommend_endpoint(request: Request):
        current = app.state.bundle
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "invalid JSON body"}, status_code=400)
        try:
            req = RecommendRequest.from_mapping(
                body, current.config.service.default_k, current.config.service.max_k
            )
            response = recommend(req, current)
        except RequestError as exc:
            return JSONResponse({"error": exc.message}, status_code=exc.status)
        return response.to_dict()

    @app.get("/document/{doc_id}")
    def get_document(doc_id: str):
        current = app.state.bundle
        if doc_id not in current.store:
            return JSONResponse({"error": f"unknown document {doc_id!r}"}, status_code=404)
        doc = current.store[doc_id]
        return {
            "id": doc.id,
            "title": doc.raw_title or " ".join(doc.title),
            "abstract": " ".join(doc.abstract),
            "authors": doc.authors,
            "venue": doc.venue,
            "keyphrases": doc.keyphrases,
            "year": doc.year,
            "out_citations": doc.out_citations,
            "in_citation_count": doc.in_citation_count,
        }

    @app.get("/health")
    def health():
        current = app.state.bundle
        return {
            "status": "ok",
            "model_version": current.model_version,
            "corpus_size": len(current.store),
            "reranker_loaded": current.rparams is not None,
            "bm25_loaded": current.bm25_index is not None,
        }

    return app
