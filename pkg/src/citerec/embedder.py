"""Document embedding model for candidate selection.

Each word type has a direction vector and a scalar magnitude; a text field is
the sum of magnitude-scaled unit directions over its unique in-vocabulary
types, and a document embedding is a weighted sum of unit-normalized field
vectors. Training pulls cited documents above non-cited ones by a hinge
margin that depends on the negative's type, with a small additive preference
for frequently cited candidates.

Gradients are computed analytically in closed form (see ``_doc_backward``)
and validated against central finite differences by ``gradient_check``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, CorpusStore, Vocabulary, TRAIN, build_vocabulary
from .optim import Adam, add_penalty_gradients, check_finite
from .vecmath import EPS, cosine, cosine_backward, sigmoid

logger = logging.getLogger(__name__)

TEXT_FIELDS = ("title", "abstract")

RANDOM, NEAREST_NEIGHBOR, CITATION_OF_CITATION = (
    "random",
    "nearest_neighbor",
    "citation_of_citation",
)

# Per-negative-type hinge margins, scaled by the margin multiplier gamma.
NEGATIVE_MARGINS = {
    RANDOM: 0.3,
    NEAREST_NEIGHBOR: 0.2,
    CITATION_OF_CITATION: 0.1,
}


@dataclass
class Triplet:
    """A (query, cited, non-cited) training instance."""

    query: Document
    positive: Document
    negative: Document
    negative_type: str

    def __post_init__(self):
        if self.negative_type not in NEGATIVE_MARGINS:
            raise ValueError(f"unknown negative type {self.negative_type!r}")


@dataclass
class TrainConfig:
    """Optimization settings shared by the embedder and the reranker."""

    gamma: float = 1.0
    learning_rate: float = 0.001
    l1_weight: float = 1e-7
    l2_weight: float = 0.0
    word_dropout: float = 0.1
    batch_size: int = 256
    triplets_per_epoch: int | None = None
    epochs: int = 5
    rng_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("gamma", "learning_rate", "l1_weight", "l2_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ValueError("word_dropout must be in [0, 1)")


class EmbedderParams:
    """Direction/magnitude tables plus field weights.

    Magnitudes are stored unconstrained and passed through ``abs`` at use, so
    plain gradient steps keep the effective magnitude non-negative without
    projection. ``lam`` holds the (title, abstract) field weights.
    """

    def __init__(self, vocab: Vocabulary, w_dir: np.ndarray, w_mag: np.ndarray, lam: np.ndarray):
        if w_dir.shape[0] != len(vocab) or w_mag.shape[0] != len(vocab):
            raise ValueError("parameter tables must cover exactly the text vocabulary")
        self.vocab = vocab
        self.w_dir = w_dir
        self.w_mag = w_mag
        self.lam = lam
        self.dim = w_dir.shape[1]

    @classmethod
    def initialize(cls, vocab: Vocabulary, dim: int, seed: int = 0) -> "EmbedderParams":
        rng = np.random.default_rng(seed)
        w_dir = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
        w_mag = np.ones(len(vocab))
        lam = np.ones(2)
        return cls(vocab, w_dir, w_mag, lam)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_dir": self.w_dir, "w_mag": self.w_mag, "lam": self.lam}

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.vocab, self.w_dir.copy(), self.w_mag.copy(), self.lam.copy())

    def load_pretrained_directions(self, path: str | Path) -> int:
        """Overwrite direction rows from a word2vec-style text file.

        Lines are ``token v1 ... vD``; an optional ``count dim`` header is
        skipped. Returns the number of vocabulary rows replaced.
        """
        loaded = 0
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                parts = line.rstrip("\n").split(" ")
                if line_no == 0 and len(parts) == 2:
                    continue
                token, values = parts[0], parts[1:]
                if token not in self.vocab.text:
                    continue
                if len(values) != self.dim:
                    raise ValueError(
                        f"pretrained vector for {token!r} has {len(values)} dims, expected {self.dim}"
                    )
                self.w_dir[self.vocab.text[token]] = [float(v) for v in values]
                loaded += 1
        return loaded

    def save(self, path: str | Path) -> None:
        meta = json.dumps(
            {"format": 1, "kind": "select_embedder", "dim": self.dim,
             "vocab_hash": self.vocab.content_hash()}
        )
        np.savez(path, meta=np.array(meta), w_dir=self.w_dir, w_mag=self.w_mag, lam=self.lam)

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary) -> "EmbedderParams":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("kind") != "select_embedder":
            raise ValueError(f"{path} is not an embedder checkpoint")
        if meta["vocab_hash"] != vocab.content_hash():
            raise ValueError("checkpoint was trained with a different vocabulary")
        return cls(vocab, data["w_dir"], data["w_mag"], data["lam"])


def doc_field_ids(vocab: Vocabulary, doc: Document) -> tuple[np.ndarray, np.ndarray]:
    """Per-field arrays of unique in-vocabulary token ids (sorted)."""
    return tuple(
        np.asarray(vocab.text_ids(getattr(doc, f)), dtype=np.int64) for f in TEXT_FIELDS
    )


@dataclass
class FieldCache:
    """Intermediate values of one field-vector forward pass, kept for backprop."""

    ids: np.ndarray
    dirs: np.ndarray
    norms: np.ndarray
    units: np.ndarray
    mags: np.ndarray
    f: np.ndarray
    nf: float


@dataclass
class _DocCache:
    fields: list[FieldCache | None]
    e: np.ndarray


def field_forward_tokens(
    w_dir: np.ndarray, w_mag: np.ndarray, ids: np.ndarray
) -> FieldCache | None:
    """f = sum over ids of |mag| * dir / (|dir| + eps); None for an empty field."""
    if ids.size == 0:
        return None
    dirs = w_dir[ids]
    norms = np.sqrt((dirs * dirs).sum(axis=1))
    units = dirs / (norms + EPS)[:, None]
    mags = w_mag[ids]
    f = (np.abs(mags)[:, None] * units).sum(axis=0)
    return FieldCache(ids, dirs, norms, units, mags, f, float(np.linalg.norm(f)))


def field_backward_tokens(
    fc: FieldCache, g_f: np.ndarray, g_dir: np.ndarray, g_mag: np.ndarray
) -> None:
    """Accumulate d(loss)/d(table rows) for upstream gradient ``g_f`` on the field sum.

    Zero-norm direction rows contributed nothing in the forward pass and get
    zero gradient here (subgradient choice at the guard).
    """
    g_mag_rows = np.sign(fc.mags) * (fc.units @ g_f)
    denom_v = fc.norms + EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = (fc.dirs @ g_f) / (fc.norms * denom_v**2)
    g_dir_rows = np.abs(fc.mags)[:, None] * (
        g_f[None, :] / denom_v[:, None] - fc.dirs * proj[:, None]
    )
    zero = fc.norms == 0.0
    if zero.any():
        g_dir_rows[zero] = 0.0
    np.add.at(g_dir, fc.ids, g_dir_rows)
    np.add.at(g_mag, fc.ids, g_mag_rows)


def _field_forward(params: EmbedderParams, ids: np.ndarray) -> FieldCache | None:
    return field_forward_tokens(params.w_dir, params.w_mag, ids)


def _doc_forward(params: EmbedderParams, ids_by_field: Sequence[np.ndarray]) -> _DocCache:
    e = np.zeros(params.dim)
    fields: list[FieldCache | None] = []
    for i, ids in enumerate(ids_by_field):
        fc = _field_forward(params, ids)
        fields.append(fc)
        if fc is not None and fc.nf > 0.0:
            e = e + params.lam[i] * fc.f / (fc.nf + EPS)
    return _DocCache(fields, e)


class EmbedderGrads:
    def __init__(self, params: EmbedderParams):
        self.w_dir = np.zeros_like(params.w_dir)
        self.w_mag = np.zeros_like(params.w_mag)
        self.lam = np.zeros_like(params.lam)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_dir": self.w_dir, "w_mag": self.w_mag, "lam": self.lam}

    def scale(self, factor: float) -> None:
        self.w_dir *= factor
        self.w_mag *= factor
        self.lam *= factor


def _doc_backward(
    params: EmbedderParams, cache: _DocCache, g_e: np.ndarray, grads: EmbedderGrads
) -> None:
    for i, fc in enumerate(cache.fields):
        if fc is None or fc.nf == 0.0:
            continue
        denom_f = fc.nf + EPS
        grads.lam[i] += float(g_e @ fc.f) / denom_f
        # d e / d f through f / (|f| + eps).
        g_f = params.lam[i] * (
            g_e / denom_f - fc.f * (float(fc.f @ g_e) / (fc.nf * denom_f**2))
        )
        field_backward_tokens(fc, g_f, grads.w_dir, grads.w_mag)


def field_vector(
    doc: Document,
    field_name: str,
    params: EmbedderParams,
    dropout_mask: Iterable[str] | None = None,
) -> np.ndarray:
    """Sum of magnitude-scaled unit direction vectors over the field's types.

    Out-of-vocabulary tokens are skipped; word types listed in
    ``dropout_mask`` are excluded (training-time word dropout). Repeats of a
    word contribute once: the sum runs over types, not occurrences.
    """
    if field_name not in TEXT_FIELDS:
        raise ValueError(f"unknown text field {field_name!r}")
    tokens = getattr(doc, field_name)
    if dropout_mask is not None:
        dropped = set(dropout_mask)
        tokens = [t for t in tokens if t not in dropped]
    ids = np.asarray(params.vocab.text_ids(tokens), dtype=np.int64)
    fc = _field_forward(params, ids)
    return np.zeros(params.dim) if fc is None else fc.f


def doc_embedding(doc: Document, params: EmbedderParams) -> np.ndarray:
    """Weighted sum of unit-normalized field vectors.

    A field with no usable tokens contributes nothing; a document with no
    usable text in either field embeds to the zero vector, which callers
    treat as "unembeddable".
    """
    return _doc_forward(params, doc_field_ids(params.vocab, doc)).e


def boost(in_citations: int) -> float:
    """Additive score bonus for frequently cited documents, in (0, 0.02)."""
    return float(sigmoid(in_citations / 100.0) / 50.0)


def triplet_loss(
    s_pos: float,
    s_neg: float,
    neg_type: str,
    b_pos: float,
    b_neg: float,
    gamma: float,
) -> float:
    """Hinge loss with per-negative-type margin and citation boosts."""
    try:
        alpha = NEGATIVE_MARGINS[neg_type]
    except KeyError:
        raise ValueError(f"unknown negative type {neg_type!r}") from None
    return max(gamma * alpha + s_neg + b_neg - s_pos - b_pos, 0.0)


TripletIds = dict[str, tuple[np.ndarray, ...]]


def _triplet_ids(params: EmbedderParams, triplet: Triplet) -> TripletIds:
    return {
        slot: doc_field_ids(params.vocab, doc)
        for slot, doc in (("q", triplet.query), ("p", triplet.positive), ("n", triplet.negative))
    }


def triplet_forward(
    params: EmbedderParams,
    triplet: Triplet,
    gamma: float,
    ids_by_slot: TripletIds | None = None,
) -> tuple[float, dict[str, _DocCache]]:
    ids = ids_by_slot if ids_by_slot is not None else _triplet_ids(params, triplet)
    caches = {slot: _doc_forward(params, ids[slot]) for slot in ("q", "p", "n")}
    s_pos = cosine(caches["q"].e, caches["p"].e)
    s_neg = cosine(caches["q"].e, caches["n"].e)
    loss = triplet_loss(
        s_pos,
        s_neg,
        triplet.negative_type,
        boost(triplet.positive.in_citation_count),
        boost(triplet.negative.in_citation_count),
        gamma,
    )
    return loss, caches


def triplet_grads(
    params: EmbedderParams,
    triplet: Triplet,
    gamma: float,
    grads: EmbedderGrads,
    ids_by_slot: TripletIds | None = None,
) -> float:
    """Accumulate d(loss)/d(params) into ``grads``; returns the loss."""
    loss, caches = triplet_forward(params, triplet, gamma, ids_by_slot)
    if loss <= 0.0:
        return loss
    e_q, e_p, e_n = caches["q"].e, caches["p"].e, caches["n"].e
    g_q_pos, g_p = cosine_backward(e_q, e_p, -1.0)
    g_q_neg, g_n = cosine_backward(e_q, e_n, 1.0)
    _doc_backward(params, caches["q"], g_q_pos + g_q_neg, grads)
    _doc_backward(params, caches["p"], g_p, grads)
    _doc_backward(params, caches["n"], g_n, grads)
    return loss


def gradient_check(
    params: EmbedderParams,
    triplet: Triplet,
    eps: float = 1e-5,
    gamma: float = 1.0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Intended for small models (dim <= 8, vocab <= 20); perturbs every entry
    of every parameter array. Entries whose true gradient sits below the
    finite-difference noise floor are compared against a 1e-6 scale.
    """
    analytic = EmbedderGrads(params)
    triplet_grads(params, triplet, gamma, analytic)

    worst = 0.0
    for name, theta in params.arrays().items():
        a_flat = analytic.arrays()[name].ravel()
        t_flat = theta.ravel()
        for i in range(t_flat.size):
            orig = t_flat[i]
            t_flat[i] = orig + eps
            up, _ = triplet_forward(params, triplet, gamma)
            t_flat[i] = orig - eps
            down, _ = triplet_forward(params, triplet, gamma)
            t_flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            scale = max(abs(a_flat[i]), abs(fd), 1e-6)
            worst = max(worst, abs(a_flat[i] - fd) / scale)
    return worst


class CorpusEmbeddings:
    """Embeddings for a set of documents, kept in one matrix for fast cosine."""

    def __init__(self, ids: list[str], matrix: np.ndarray):
        self.ids = ids
        self.matrix = matrix
        self.row = {doc_id: i for i, doc_id in enumerate(ids)}

    @classmethod
    def compute(
        cls, params: EmbedderParams, store: CorpusStore, ids: list[str] | None = None
    ) -> "CorpusEmbeddings":
        ids = list(ids) if ids is not None else store.ids()
        matrix = np.zeros((len(ids), params.dim))
        for i, doc_id in enumerate(ids):
            matrix[i] = doc_embedding(store[doc_id], params)
        return cls(ids, matrix)

    def vector(self, doc_id: str) -> np.ndarray:
        return self.matrix[self.row[doc_id]]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.row

    def as_dict(self) -> dict[str, np.ndarray]:
        return {doc_id: self.matrix[i] for doc_id, i in self.row.items()}


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    n_triplets: int
    seconds: float


_SLOT_ORDER = ("q", "p", "n")


def _dropout_ids(
    rng: np.random.Generator, ids_by_slot: TripletIds, p: float
) -> TripletIds:
    """Per-field Bernoulli removal of word types, training only."""
    if p <= 0.0:
        return ids_by_slot
    return {
        slot: tuple(
            ids[rng.random(ids.size) >= p] if ids.size else ids
            for ids in ids_by_slot[slot]
        )
        for slot in _SLOT_ORDER
    }


def train_embedder(
    store: CorpusStore,
    sampler,
    config: TrainConfig,
    vocab: Vocabulary | None = None,
    dim: int = 75,
    n_trees: int = 16,
    leaf_capacity: int = 32,
    params: EmbedderParams | None = None,
) -> tuple[EmbedderParams, list[EpochStats]]:
    """Minibatch Adam on the margin loss, refreshing neighbors each epoch.

    Before every epoch the train-split documents are re-embedded and a fresh
    approximate-neighbor forest is built from them, so the sampler's
    nearest-neighbor negatives track the current embedding space. Fully
    deterministic for a fixed ``config.rng_seed`` on a single thread.
    """
    from .ann import build_index

    if vocab is None:
        vocab = build_vocabulary(store)
    if params is None:
        params = EmbedderParams.initialize(vocab, dim, config.rng_seed)
    adam = Adam(
        params.arrays(),
        lr=config.learning_rate,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
    train_ids = store.split_ids(TRAIN) if store.splits else store.ids()
    queries = [
        i for i in train_ids
        if len(store[i].out_citations) >= sampler.config.min_true_citations
    ]
    if not queries:
        raise ValueError("no train documents satisfy the minimum-citation requirement")

    # Token-id lookups never change during a run; cache them per document.
    ids_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _cached_ids(doc: Document) -> tuple[np.ndarray, np.ndarray]:
        cached = ids_cache.get(doc.id)
        if cached is None:
            cached = ids_cache[doc.id] = doc_field_ids(vocab, doc)
        return cached

    stats: list[EpochStats] = []
    for epoch in range(config.epochs):
        start = time.perf_counter()
        embeddings = CorpusEmbeddings.compute(params, store, train_ids)
        forest = build_index(
            embeddings.as_dict(),
            n_trees=n_trees,
            leaf_capacity=leaf_capacity,
            seed=config.rng_seed,
        )

        triplets: list[Triplet] = []
        for qid in queries:
            triplets.extend(
                sampler.sample_triplets(store[qid], store, forest, params, embeddings)
            )
        epoch_rng = np.random.default_rng([config.rng_seed, epoch, 17])
        order = epoch_rng.permutation(len(triplets))
        if config.triplets_per_epoch is not None:
            order = order[: config.triplets_per_epoch]

        total_loss = 0.0
        n_seen = 0
        dropout_rng = np.random.default_rng([config.rng_seed, epoch, 101])
        for b_start in range(0, len(order), config.batch_size):
            batch = order[b_start : b_start + config.batch_size]
            grads = EmbedderGrads(params)
            batch_loss = 0.0
            for idx in batch:
                t = triplets[idx]
                ids_by_slot = {
                    slot: _cached_ids(doc)
                    for slot, doc in (("q", t.query), ("p", t.positive), ("n", t.negative))
                }
                ids_by_slot = _dropout_ids(dropout_rng, ids_by_slot, config.word_dropout)
                batch_loss += triplet_grads(params, t, config.gamma, grads, ids_by_slot)
            grads.scale(1.0 / len(batch))
            grad_arrays = grads.arrays()
            add_penalty_gradients(params.arrays(), grad_arrays, config.l1_weight, config.l2_weight)
            check_finite(batch_loss, grad_arrays, f"epoch {epoch} batch {b_start // config.batch_size}")
            adam.step(grad_arrays)
            total_loss += batch_loss
            n_seen += len(batch)

        stats.append(
            EpochStats(epoch, total_loss / max(n_seen, 1), n_seen, time.perf_counter() - start)
        )
        logger.info(
            "embedder epoch %d: mean loss %.5f over %d triplets (%.2fs)",
            epoch, stats[-1].mean_loss, n_seen, stats[-1].seconds,
        )
    return params, stats
