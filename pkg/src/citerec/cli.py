"""Command-line driver for the full recommendation pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig
from .corpus import CorpusStore, Vocabulary, tokenize
from .service import ArtifactBundle, RecommendRequest, RequestError, create_app, recommend
from .select import format_sweep
from . import workflows

logger = logging.getLogger(__name__)


def _load_config(args) -> AppConfig:
    config = AppConfig.from_file(args.config) if args.config else AppConfig()
    if args.seed is not None:
        config.rng_seed = args.seed
    return config


def _store(path: str) -> CorpusStore:
    return CorpusStore.load(path)


def cmd_ingest(args) -> int:
    config = _load_config(args)
    store = workflows.run_ingest(args.input, args.output, config)
    report = store.report.to_dict()
    report["splits"] = {
        name: len(store.split_ids(name)) for name in ("train", "dev", "test")
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_train_select(args) -> int:
    config = _load_config(args)
    workflows.run_train_select(_store(args.store), args.artifacts, config)
    print(f"wrote {Path(args.artifacts) / 'embedder.npz'}")
    return 0


def cmd_build_index(args) -> int:
    config = _load_config(args)
    forest = workflows.run_build_index(_store(args.store), args.artifacts, config)
    print(f"indexed {len(forest)} documents in {forest.n_trees} trees")
    return 0


def cmd_train_rank(args) -> int:
    config = _load_config(args)
    if args.no_metadata:
        config.rank.use_metadata = False
    workflows.run_train_rank(_store(args.store), args.artifacts, config)
    print(f"wrote {Path(args.artifacts) / 'ranker.npz'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    report = workflows.run_evaluate(
        _store(args.store), args.artifacts, config,
        split=args.split, mode=args.mode, max_queries=args.max_queries,
    )
    print(report.format_table())
    if args.output:
        Path(args.output).write_text(report.to_json())
    return 0


def cmd_sweep_k(args) -> int:
    config = _load_config(args)
    k_values = [int(k) for k in args.k.split(",")]
    rows = workflows.run_sweep(
        _store(args.store), args.artifacts, config, k_values,
        split=args.split, max_queries=args.max_queries,
    )
    print(format_sweep(rows))
    return 0


def cmd_bm25(args) -> int:
    config = _load_config(args)
    if args.build:
        store = _store(args.store)
        index = workflows.run_build_bm25(store, args.artifacts, config)
        print(f"indexed {index.n_docs} documents")
        return 0
    if args.query is not None:
        from .bm25 import Bm25Index, bm25_rank
        from .corpus import Document

        index = Bm25Index.load(Path(args.artifacts) / "bm25.json")
        query = Document(
            id="__query__",
            title=tokenize(args.query, config.data.max_title_length),
            abstract=[],
        )
        for doc_id, score in bm25_rank(query, index, top_n=args.top):
            print(f"{doc_id}\t{score:.4f}")
        return 0
    print("bm25: pass --build or --query", file=sys.stderr)
    return 2


def cmd_select(args) -> int:
    config = _load_config(args)
    bundle = ArtifactBundle.load(args.artifacts, args.store, config)
    from .corpus import Document
    from .select import select_candidates

    with open(args.query_file, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            query = Document(
                id=str(rec.get("id", "__query__")),
                title=tokenize(str(rec.get("title", "")), config.data.max_title_length),
                abstract=tokenize(
                    str(rec.get("abstract", "")), config.data.max_abstract_length
                ),
            )
            cset = select_candidates(
                query, bundle.eparams, bundle.forest, bundle.store, args.k,
                search_budget=config.ann.search_budget,
            )
            print(
                json.dumps(
                    {
                        "query_id": cset.query_id,
                        "candidates": [
                            {"id": c.id, "score": c.score, "origin": c.origin}
                            for c in cset.candidates[: args.top]
                        ],
                    }
                )
            )
    return 0


def cmd_recommend(args) -> int:
    config = _load_config(args)
    bundle = ArtifactBundle.load(args.artifacts, args.store, config)
    req = RecommendRequest(
        title=args.title or "", abstract=args.abstract or "", k=args.k, mode=args.mode
    )
    try:
        response = recommend(req, bundle)
    except RequestError as exc:
        print(json.dumps({"error": exc.message, "status": exc.status}), file=sys.stderr)
        return 1
    print(json.dumps(response.to_dict(), indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    config = _load_config(args)
    bundle = ArtifactBundle.load(args.artifacts, args.store, config)
    app = create_app(bundle)
    host = args.host or config.service.host
    port = args.port or config.service.port
    uvicorn.run(app, host=host, port=port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="citerec", description="Content-based citation recommendation pipeline"
    )
    parser.add_argument("--config", help="JSON or TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config rng seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a JSONL corpus and assign year splits")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="store directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-select", help="train the selection embedder")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.set_defaults(func=cmd_train_select)

    p = sub.add_parser("build-index", help="embed the corpus and build the neighbor forest")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("train-rank", help="train the reranker")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--no-metadata", action="store_true")
    p.set_defaults(func=cmd_train_rank)

    p = sub.add_parser("evaluate", help="score a split with ranking metrics")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.add_argument("--mode", default="rerank", choices=["select_only", "rerank", "bm25"])
    p.add_argument("--max-queries", type=int, default=None)
    p.add_argument("--output", help="also write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-k", help="neighbor-count sweep (recall/precision/latency)")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--k", default="1,5,10,50", help="comma-separated neighbor counts")
    p.add_argument("--split", default="dev", choices=["train", "dev", "test"])
    p.add_argument("--max-queries", type=int, default=1000)
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("bm25", help="build or query the BM25 baseline")
    p.add_argument("--build", action="store_true")
    p.add_argument("--query", help="free-text query")
    p.add_argument("--store")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--top", type=int, default=20)
    p.set_defaults(func=cmd_bm25)

    p = sub.add_parser("select", help="emit candidate sets for query documents")
    p.add_argument("--query-file", required=True, help="JSONL of query documents")
    p.add_argument("--k", type=int, default=5, help="nearest neighbors to expand")
    p.add_argument("--top", type=int, default=100, help="candidates to emit per query")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("recommend", help="one-shot recommendation for a draft")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--title", default="")
    p.add_argument("--abstract", default="")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--mode", default="rerank", choices=["select_only", "rerank", "bm25"])
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("serve", help="run the HTTP recommendation service")
    p.add_argument("--store", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
