"""Discriminative reranker over (query, candidate) pairs.

Features are per-field cosine similarities computed with the same
magnitude-direction machinery as the selection embedder (but with the
reranker's own tables), the frozen selection-space cosine, summed learned
weights of word types shared by both documents, and the log incoming
citation count. A three-layer feedforward network (two ELU layers, sigmoid
output) maps the features to the probability that the query cites the
candidate. Training reuses the margin loss with this probability as the
score; all gradients are closed-form and checked against finite differences.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from .corpus import ConfigError, CorpusStore, Document, Vocabulary, TRAIN
from .embedder import (
    CorpusEmbeddings,
    EmbedderParams,
    EpochStats,
    FieldCache,
    TrainConfig,
    Triplet,
    boost,
    field_forward_tokens,
    field_backward_tokens,
    triplet_loss,
)
from .optim import Adam, add_penalty_gradients, check_finite
from .select import CandidateSet
from .vecmath import EPS, cosine, cosine_backward, elu, elu_grad, sigmoid

logger = logging.getLogger(__name__)

TEXT_FIELDS = ("title", "abstract")
META_FIELDS = ("authors", "venue", "keyphrases")
N_FEATURES_TEXT_ONLY = 6
N_FEATURES_WITH_META = 9


@dataclass
class FeatureVector:
    """Inputs to the feedforward scorer for one (query, candidate) pair."""

    g_title: float = 0.0
    g_abstract: float = 0.0
    g_authors: float = 0.0
    g_venue: float = 0.0
    g_keyphrases: float = 0.0
    embed_cos: float = 0.0
    sum_intersect_title: float = 0.0
    sum_intersect_abstract: float = 0.0
    log_in_citations: float = 0.0

    def as_array(self, use_metadata: bool) -> np.ndarray:
        if use_metadata:
            return np.array(
                [
                    self.g_title, self.g_abstract, self.g_authors, self.g_venue,
                    self.g_keyphrases, self.embed_cos, self.sum_intersect_title,
                    self.sum_intersect_abstract, self.log_in_citations,
                ]
            )
        return np.array(
            [
                self.g_title, self.g_abstract, self.embed_cos,
                self.sum_intersect_title, self.sum_intersect_abstract,
                self.log_in_citations,
            ]
        )


class RankerParams:
    """Field embedding tables, intersection weights, and feedforward weights.

    With ``siamese=True`` the query and candidate sides share one table per
    field group; otherwise each side has its own. One intersection-weight
    table is shared by title and abstract.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        tables: dict[str, np.ndarray],
        w_cap: np.ndarray,
        dense: dict[str, np.ndarray],
        dim_text: int,
        dim_meta: int,
        hidden: int,
        siamese: bool,
        use_metadata: bool,
    ):
        self.vocab = vocab
        self.tables = tables
        self.w_cap = w_cap
        self.dense = dense
        self.dim_text = dim_text
        self.dim_meta = dim_meta
        self.hidden = hidden
        self.siamese = siamese
        self.use_metadata = use_metadata
        self.n_features = N_FEATURES_WITH_META if use_metadata else N_FEATURES_TEXT_ONLY
        if dense["w1"].shape != (hidden, self.n_features):
            raise ConfigError(
                f"first dense layer expects {dense['w1'].shape[1]} features, "
                f"model assembles {self.n_features}"
            )

    @staticmethod
    def _field_vocab_size(vocab: Vocabulary, field_name: str) -> int:
        if field_name in TEXT_FIELDS:
            return len(vocab.text)
        return len(getattr(vocab, field_name if field_name != "venue" else "venues"))

    @classmethod
    def initialize(
        cls,
        vocab: Vocabulary,
        dim_text: int = 75,
        dim_meta: int = 25,
        hidden: int | None = None,
        siamese: bool = True,
        use_metadata: bool = True,
        seed: int = 0,
    ) -> "RankerParams":
        rng = np.random.default_rng([seed, 7])
        hidden = dim_text if hidden is None else hidden
        sides = ("",) if siamese else ("_q", "_c")
        groups = [("text", len(vocab.text), dim_text)]
        if use_metadata:
            groups += [
                ("authors", len(vocab.authors), dim_meta),
                ("venue", len(vocab.venues), dim_meta),
                ("keyphrases", len(vocab.keyphrases), dim_meta),
            ]
        tables: dict[str, np.ndarray] = {}
        for name, size, dim in groups:
            for side in sides:
                tables[f"{name}{side}_dir"] = rng.uniform(-0.05, 0.05, size=(size, dim))
                tables[f"{name}{side}_mag"] = np.ones(size)
        n_features = N_FEATURES_WITH_META if use_metadata else N_FEATURES_TEXT_ONLY

        def glorot(n_out, n_in):
            bound = np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-bound, bound, size=(n_out, n_in))

        dense = {
            "w1": glorot(hidden, n_features),
            "b1": np.zeros(hidden),
            "w2": glorot(hidden, hidden),
            "b2": np.zeros(hidden),
            "w3": glorot(1, hidden)[0],
            "b3": np.zeros(1),
        }
        return cls(
            vocab, tables, np.zeros(len(vocab.text)), dense,
            dim_text, dim_meta, hidden, siamese, use_metadata,
        )

    def table(self, group: str, side: str) -> tuple[np.ndarray, np.ndarray, str]:
        """(direction table, magnitude table, parameter key prefix) for one side."""
        key = group if self.siamese else f"{group}_{side}"
        return self.tables[f"{key}_dir"], self.tables[f"{key}_mag"], key

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"tab_{k}": v for k, v in self.tables.items()}
        out.update({f"dense_{k}": v for k, v in self.dense.items()})
        out["w_cap"] = self.w_cap
        return out

    def copy(self) -> "RankerParams":
        return RankerParams(
            self.vocab,
            {k: v.copy() for k, v in self.tables.items()},
            self.w_cap.copy(),
            {k: v.copy() for k, v in self.dense.items()},
            self.dim_text, self.dim_meta, self.hidden, self.siamese, self.use_metadata,
        )

    def save(self, path) -> None:
        meta = json.dumps(
            {
                "format": 1, "kind": "reranker", "dim_text": self.dim_text,
                "dim_meta": self.dim_meta, "hidden": self.hidden,
                "siamese": self.siamese, "use_metadata": self.use_metadata,
                "vocab_hash": self.vocab.content_hash(),
                "tables": sorted(self.tables),
            }
        )
        np.savez(
            path, meta=np.array(meta), w_cap=self.w_cap,
            **{f"tab_{k}": v for k, v in self.tables.items()},
            **{f"dense_{k}": v for k, v in self.dense.items()},
        )

    @classmethod
    def load(cls, path, vocab: Vocabulary) -> "RankerParams":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("kind") != "reranker":
            raise ValueError(f"{path} is not a reranker checkpoint")
        if meta["vocab_hash"] != vocab.content_hash():
            raise ValueError("checkpoint was trained with a different vocabulary")
        tables = {k: data[f"tab_{k}"] for k in meta["tables"]}
        dense = {k: data[f"dense_{k}"] for k in ("w1", "b1", "w2", "b2", "w3", "b3")}
        return cls(
            vocab, tables, data["w_cap"], dense, meta["dim_text"], meta["dim_meta"],
            meta["hidden"], meta["siamese"], meta["use_metadata"],
        )


def _field_tokens(vocab: Vocabulary, doc: Document, group: str) -> list[str]:
    if group == "text":
        raise ValueError("text group is addressed per field")
    if group == "authors":
        return doc.authors
    if group == "venue":
        return [doc.venue] if doc.venue else []
    return doc.keyphrases


def _group_vocab(vocab: Vocabulary, group: str) -> dict[str, int]:
    return {
        "text": vocab.text, "authors": vocab.authors,
        "venue": vocab.venues, "keyphrases": vocab.keyphrases,
    }[group]


def _token_ids(
    vocab_map: dict[str, int], tokens, dropped: set[str] | None = None
) -> np.ndarray:
    if dropped:
        tokens = [t for t in tokens if t not in dropped]
    return np.asarray(sorted({vocab_map[t] for t in tokens if t in vocab_map}), dtype=np.int64)


@dataclass
class _PairSide:
    cache: FieldCache | None
    table_key: str


@dataclass
class _Feature:
    name: str
    value: float
    q: _PairSide | None = None
    c: _PairSide | None = None
    intersect_ids: np.ndarray | None = None


@dataclass
class _PairCache:
    features: list[_Feature]
    h: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: float
    s: float


def _cosine_feature(
    params: RankerParams,
    group: str,
    q_ids: np.ndarray,
    c_ids: np.ndarray,
) -> _Feature:
    q_dir, q_mag, q_key = params.table(group, "q")
    c_dir, c_mag, c_key = params.table(group, "c")
    q_cache = field_forward_tokens(q_dir, q_mag, q_ids)
    c_cache = field_forward_tokens(c_dir, c_mag, c_ids)
    value = 0.0
    if q_cache is not None and c_cache is not None:
        value = cosine(q_cache.f, c_cache.f)
    return _Feature(
        name=group,
        value=value,
        q=_PairSide(q_cache, q_key),
        c=_PairSide(c_cache, c_key),
    )


def _pair_forward(
    params: RankerParams,
    query: Document,
    cand: Document,
    embed_cos: float,
    dropout: dict[tuple[str, str], set[str]] | None = None,
) -> _PairCache:
    vocab = params.vocab
    features: list[_Feature] = []

    def dropped(slot: str, field_name: str) -> set[str] | None:
        return dropout.get((slot, field_name)) if dropout else None

    for field_name in TEXT_FIELDS:
        q_ids = _token_ids(vocab.text, getattr(query, field_name), dropped("q", field_name))
        c_ids = _token_ids(vocab.text, getattr(cand, field_name), dropped("c", field_name))
        features.append(_cosine_feature(params, "text", q_ids, c_ids))
        features[-1].name = field_name

    if params.use_metadata:
        for group in META_FIELDS:
            vocab_map = _group_vocab(vocab, group)
            q_ids = _token_ids(vocab_map, _field_tokens(vocab, query, group))
            c_ids = _token_ids(vocab_map, _field_tokens(vocab, cand, group))
            features.append(_cosine_feature(params, group, q_ids, c_ids))

    features.append(_Feature("embed_cos", embed_cos))

    for field_name in TEXT_FIELDS:
        shared = set(getattr(query, field_name)) & set(getattr(cand, field_name))
        ids = _token_ids(vocab.text, shared)
        value = float(params.w_cap[ids].sum()) if ids.size else 0.0
        features.append(_Feature(f"intersect_{field_name}", value, intersect_ids=ids))

    features.append(_Feature("log_in_citations", float(np.log1p(cand.in_citation_count))))

    h = np.array([f.value for f in features])
    if h.shape[0] != params.n_features:
        raise ConfigError(
            f"assembled {h.shape[0]} features but model expects {params.n_features}"
        )
    d = params.dense
    z1 = d["w1"] @ h + d["b1"]
    a1 = elu(z1)
    z2 = d["w2"] @ a1 + d["b2"]
    a2 = elu(z2)
    z3 = float(d["w3"] @ a2 + d["b3"][0])
    return _PairCache(features, h, z1, a1, z2, a2, z3, float(sigmoid(z3)))


class RankerGrads:
    def __init__(self, params: RankerParams):
        self.data = {k: np.zeros_like(v) for k, v in params.arrays().items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return self.data

    def scale(self, factor: float) -> None:
        for v in self.data.values():
            v *= factor


def _pair_backward(
    params: RankerParams, cache: _PairCache, upstream: float, grads: RankerGrads
) -> None:
    """Backprop ``upstream * d(sigmoid output)`` into every ranker parameter."""
    d = params.dense
    g = grads.data
    dz3 = upstream * cache.s * (1.0 - cache.s)
    g["dense_w3"] += dz3 * cache.a2
    g["dense_b3"][0] += dz3
    da2 = dz3 * d["w3"]
    dz2 = da2 * elu_grad(cache.z2)
    g["dense_w2"] += np.outer(dz2, cache.a1)
    g["dense_b2"] += dz2
    da1 = d["w2"].T @ dz2
    dz1 = da1 * elu_grad(cache.z1)
    g["dense_w1"] += np.outer(dz1, cache.h)
    g["dense_b1"] += dz1
    dh = d["w1"].T @ dz1

    for slot, feat in zip(dh, cache.features):
        if feat.intersect_ids is not None:
            if feat.intersect_ids.size:
                np.add.at(g["w_cap"], feat.intersect_ids, slot)
            continue
        if feat.q is None or feat.c is None:
            continue  # embed_cos is frozen; log_in_citations is a constant
        qc, cc = feat.q.cache, feat.c.cache
        if qc is None or cc is None:
            continue
        g_fq, g_fc = cosine_backward(qc.f, cc.f, float(slot))
        field_backward_tokens(qc, g_fq, g[f"tab_{feat.q.table_key}_dir"], g[f"tab_{feat.q.table_key}_mag"])
        field_backward_tokens(cc, g_fc, g[f"tab_{feat.c.table_key}_dir"], g[f"tab_{feat.c.table_key}_mag"])


def rank_features(
    query: Document,
    cand: Document,
    rparams: RankerParams,
    eparams: EmbedderParams,
    embed_cos: float | None = None,
) -> FeatureVector:
    """Assemble the scorer's input features for one (query, candidate) pair.

    ``embed_cos`` may be supplied when the selection-space cosine is already
    known (it is the candidate's selection score); otherwise it is computed
    from the frozen selection embedder.
    """
    if embed_cos is None:
        from .embedder import doc_embedding

        embed_cos = cosine(doc_embedding(query, eparams), doc_embedding(cand, eparams))
    cache = _pair_forward(rparams, query, cand, embed_cos)
    values = {f.name: f.value for f in cache.features}
    return FeatureVector(
        g_title=values["title"],
        g_abstract=values["abstract"],
        g_authors=values.get("authors", 0.0),
        g_venue=values.get("venue", 0.0),
        g_keyphrases=values.get("keyphrases", 0.0),
        embed_cos=embed_cos,
        sum_intersect_title=values["intersect_title"],
        sum_intersect_abstract=values["intersect_abstract"],
        log_in_citations=values["log_in_citations"],
    )


def rank_score(features: FeatureVector, rparams: RankerParams) -> float:
    """Probability in (0, 1) that the query cites the candidate."""
    h = features.as_array(rparams.use_metadata)
    if h.shape[0] != rparams.n_features:
        raise ConfigError(
            f"feature vector has {h.shape[0]} entries, model expects {rparams.n_features}"
        )
    d = rparams.dense
    a1 = elu(d["w1"] @ h + d["b1"])
    a2 = elu(d["w2"] @ a1 + d["b2"])
    return float(sigmoid(float(d["w3"] @ a2 + d["b3"][0])))


def score_pair(
    query: Document,
    cand: Document,
    rparams: RankerParams,
    eparams: EmbedderParams,
    embed_cos: float | None = None,
) -> float:
    return rank_score(rank_features(query, cand, rparams, eparams, embed_cos), rparams)


def rerank(
    query: Document,
    candidates: CandidateSet,
    rparams: RankerParams,
    eparams: EmbedderParams,
    top_n: int,
    store: CorpusStore,
) -> list[tuple[str, float]]:
    """Rescore candidates with the reranker; descending probability, ties by id.

    Each candidate's selection score is reused as the frozen embedding-space
    cosine feature.
    """
    scored = [
        (c.id, score_pair(query, store[c.id], rparams, eparams, embed_cos=c.score))
        for c in candidates.candidates
    ]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:top_n]


def _triplet_pair_losses(
    rparams: RankerParams,
    triplet: Triplet,
    gamma: float,
    embed_cos_pos: float,
    embed_cos_neg: float,
    dropout_pos=None,
    dropout_neg=None,
) -> tuple[float, _PairCache, _PairCache]:
    pos = _pair_forward(rparams, triplet.query, triplet.positive, embed_cos_pos, dropout_pos)
    neg = _pair_forward(rparams, triplet.query, triplet.negative, embed_cos_neg, dropout_neg)
    loss = triplet_loss(
        pos.s, neg.s, triplet.negative_type,
        boost(triplet.positive.in_citation_count),
        boost(triplet.negative.in_citation_count),
        gamma,
    )
    return loss, pos, neg


def ranker_triplet_grads(
    rparams: RankerParams,
    triplet: Triplet,
    gamma: float,
    grads: RankerGrads,
    embed_cos_pos: float,
    embed_cos_neg: float,
    dropout_pos=None,
    dropout_neg=None,
) -> float:
    loss, pos, neg = _triplet_pair_losses(
        rparams, triplet, gamma, embed_cos_pos, embed_cos_neg, dropout_pos, dropout_neg
    )
    if loss > 0.0:
        _pair_backward(rparams, pos, -1.0, grads)
        _pair_backward(rparams, neg, 1.0, grads)
    return loss


def gradient_check_ranker(
    rparams: RankerParams,
    triplet: Triplet,
    embed_cos_pos: float = 0.3,
    embed_cos_neg: float = 0.2,
    eps: float = 1e-5,
    gamma: float = 1.0,
) -> float:
    """Max relative error of the composite gradient (features through output)."""
    analytic = RankerGrads(rparams)
    ranker_triplet_grads(rparams, triplet, gamma, analytic, embed_cos_pos, embed_cos_neg)

    worst = 0.0
    for name, theta in rparams.arrays().items():
        a_flat = analytic.data[name].ravel()
        t_flat = theta.ravel()
        for i in range(t_flat.size):
            orig = t_flat[i]
            t_flat[i] = orig + eps
            up, _, _ = _triplet_pair_losses(rparams, triplet, gamma, embed_cos_pos, embed_cos_neg)
            t_flat[i] = orig - eps
            down, _, _ = _triplet_pair_losses(rparams, triplet, gamma, embed_cos_pos, embed_cos_neg)
            t_flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            scale = max(abs(a_flat[i]), abs(fd), 1e-6)
            worst = max(worst, abs(a_flat[i] - fd) / scale)
    return worst


def _sample_text_dropout(
    rng: np.random.Generator, docs: dict[str, Document], p: float
) -> dict[tuple[str, str], set[str]] | None:
    if p <= 0.0:
        return None
    masks: dict[tuple[str, str], set[str]] = {}
    for slot, doc in docs.items():
        for field_name in TEXT_FIELDS:
            types = sorted(set(getattr(doc, field_name)))
            if types:
                keep = rng.random(len(types)) >= p
                drop = {t for t, k in zip(types, keep) if not k}
                if drop:
                    masks[(slot, field_name)] = drop
    return masks or None


def train_ranker(
    store: CorpusStore,
    sampler,
    eparams: EmbedderParams,
    config: TrainConfig,
    rparams: RankerParams | None = None,
    dim_meta: int = 25,
    hidden: int | None = None,
    siamese: bool = True,
    use_metadata: bool = True,
    n_trees: int = 16,
    leaf_capacity: int = 32,
) -> tuple[RankerParams, list[EpochStats]]:
    """Train the reranker on sampled triplets with the frozen selection model.

    The selection embeddings never move during this phase, so the neighbor
    forest used for hard negatives is built once up front.
    """
    from .ann import build_index

    if rparams is None:
        rparams = RankerParams.initialize(
            eparams.vocab, dim_text=eparams.dim, dim_meta=dim_meta, hidden=hidden,
            siamese=siamese, use_metadata=use_metadata, seed=config.rng_seed,
        )
    adam = Adam(
        rparams.arrays(), lr=config.learning_rate, beta1=config.adam_beta1,
        beta2=config.adam_beta2, eps=config.adam_eps,
    )
    train_ids = store.split_ids(TRAIN) if store.splits else store.ids()
    queries = [
        i for i in train_ids
        if len(store[i].out_citations) >= sampler.config.min_true_citations
    ]
    if not queries:
        raise ValueError("no train documents satisfy the minimum-citation requirement")

    embeddings = CorpusEmbeddings.compute(eparams, store, train_ids)
    forest = build_index(
        embeddings.as_dict(), n_trees=n_trees, leaf_capacity=leaf_capacity,
        seed=config.rng_seed,
    )
    triplets: list[Triplet] = []
    for qid in queries:
        triplets.extend(sampler.sample_triplets(store[qid], store, forest, eparams, embeddings))

    def frozen_cos(a: Document, b: Document) -> float:
        return cosine(embeddings.vector(a.id), embeddings.vector(b.id)) \
            if a.id in embeddings and b.id in embeddings else 0.0

    stats: list[EpochStats] = []
    for epoch in range(config.epochs):
        start = time.perf_counter()
        epoch_rng = np.random.default_rng([config.rng_seed, epoch, 19])
        order = epoch_rng.permutation(len(triplets))
        if config.triplets_per_epoch is not None:
            order = order[: config.triplets_per_epoch]
        dropout_rng = np.random.default_rng([config.rng_seed, epoch, 103])

        total_loss = 0.0
        n_seen = 0
        for b_start in range(0, len(order), config.batch_size):
            batch = order[b_start : b_start + config.batch_size]
            grads = RankerGrads(rparams)
            batch_loss = 0.0
            for idx in batch:
                t = triplets[idx]
                dropout = _sample_text_dropout(
                    dropout_rng,
                    {"q": t.query, "c": t.positive},
                    config.word_dropout,
                )
                dropout_neg = _sample_text_dropout(
                    dropout_rng,
                    {"q": t.query, "c": t.negative},
                    config.word_dropout,
                )
                batch_loss += ranker_triplet_grads(
                    rparams, t, config.gamma, grads,
                    frozen_cos(t.query, t.positive), frozen_cos(t.query, t.negative),
                    dropout, dropout_neg,
                )
            grads.scale(1.0 / len(batch))
            grad_arrays = grads.arrays()
            add_penalty_gradients(
                rparams.arrays(), grad_arrays, config.l1_weight, config.l2_weight
            )
            check_finite(
                batch_loss, grad_arrays,
                f"epoch {epoch} batch {b_start // config.batch_size}",
            )
            adam.step(grad_arrays)
            total_loss += batch_loss
            n_seen += len(batch)

        stats.append(
            EpochStats(epoch, total_loss / max(n_seen, 1), n_seen, time.perf_counter() - start)
        )
        logger.info(
            "ranker epoch %d: mean loss %.5f over %d triplets (%.2fs)",
            epoch, stats[-1].mean_loss, n_seen, stats[-1].seconds,
        )
    return rparams, stats
