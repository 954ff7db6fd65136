"""Forest of random-hyperplane trees for approximate cosine nearest neighbors.

Each tree recursively splits the indexed points by the perpendicular
bisector of two randomly chosen points until leaves hold at most
``leaf_capacity`` items. Queries walk all trees through one shared priority
queue ordered by hyperplane margin, collect candidate leaves until a search
budget is exhausted, then score candidates by exact cosine similarity.
"""

from __future__ import annotations

import heapq
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .vecmath import cosine_against_matrix

logger = logging.getLogger(__name__)

MAGIC = b"CRAF"
FORMAT_VERSION = 1
METRIC_COSINE = 0
_MAX_DEPTH = 64
_SPLIT_ATTEMPTS = 3


class IndexError_(ValueError):
    """Bad index input (dimension mismatch, empty collection)."""


@dataclass
class _Tree:
    # children[i] = (left, right) for internal nodes; (-1, leaf_index) for leaves.
    children: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    leaf_starts: np.ndarray
    leaf_data: np.ndarray

    def leaf_items(self, leaf_index: int) -> np.ndarray:
        return self.leaf_data[self.leaf_starts[leaf_index] : self.leaf_starts[leaf_index + 1]]


@dataclass
class Neighbors:
    """Query result: (id, cosine similarity) pairs, best first."""

    items: list[tuple[str, float]]
    capped: bool = False  # True when k exceeded the collection size


class AnnForest:
    def __init__(
        self,
        ids: list[str],
        matrix: np.ndarray,
        trees: list[_Tree],
        leaf_capacity: int,
        seed: int,
    ):
        self.ids = ids
        self.matrix = matrix
        self.trees = trees
        self.leaf_capacity = leaf_capacity
        self.seed = seed
        self.dim = matrix.shape[1]
        self.n_trees = len(trees)
        self.metric = "cosine"
        self.row = {doc_id: i for i, doc_id in enumerate(ids)}
        self.ids_array = np.asarray(ids)

    def __len__(self) -> int:
        return len(self.ids)

    # -- serialization ----------------------------------------------------

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(
            struct.pack(
                "<IIIIBq Q".replace(" ", ""),
                FORMAT_VERSION,
                self.dim,
                self.n_trees,
                self.leaf_capacity,
                METRIC_COSINE,
                self.seed,
                len(self.ids),
            )
        )
        for doc_id in self.ids:
            raw = doc_id.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
        out.write(np.ascontiguousarray(self.matrix, dtype=np.float64).tobytes())
        for tree in self.trees:
            out.write(struct.pack("<II", tree.children.shape[0], tree.leaf_starts.shape[0] - 1))
            out.write(np.ascontiguousarray(tree.children, dtype=np.int32).tobytes())
            out.write(np.ascontiguousarray(tree.normals, dtype=np.float64).tobytes())
            out.write(np.ascontiguousarray(tree.offsets, dtype=np.float64).tobytes())
            out.write(np.ascontiguousarray(tree.leaf_starts, dtype=np.int64).tobytes())
            out.write(np.ascontiguousarray(tree.leaf_data, dtype=np.int64).tobytes())
        return out.getvalue()

    @classmethod
    def load(cls, path: str | Path) -> "AnnForest":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AnnForest":
        buf = io.BytesIO(blob)
        if buf.read(4) != MAGIC:
            raise ValueError("not an ANN forest file")
        version, dim, n_trees, leaf_capacity, metric, seed, n_items = struct.unpack(
            "<IIIIBqQ", buf.read(struct.calcsize("<IIIIBqQ"))
        )
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {version}")
        if metric != METRIC_COSINE:
            raise ValueError(f"unsupported metric code {metric}")
        ids = []
        for _ in range(n_items):
            (length,) = struct.unpack("<I", buf.read(4))
            ids.append(buf.read(length).decode("utf-8"))
        matrix = np.frombuffer(buf.read(n_items * dim * 8), dtype=np.float64).reshape(
            n_items, dim
        ).copy()
        trees = []
        for _ in range(n_trees):
            n_nodes, n_leaves = struct.unpack("<II", buf.read(8))
            children = np.frombuffer(buf.read(n_nodes * 2 * 4), dtype=np.int32).reshape(
                n_nodes, 2
            ).copy()
            normals = np.frombuffer(buf.read(n_nodes * dim * 8), dtype=np.float64).reshape(
                n_nodes, dim
            ).copy()
            offsets = np.frombuffer(buf.read(n_nodes * 8), dtype=np.float64).copy()
            leaf_starts = np.frombuffer(buf.read((n_leaves + 1) * 8), dtype=np.int64).copy()
            n_data = int(leaf_starts[-1])
            leaf_data = np.frombuffer(buf.read(n_data * 8), dtype=np.int64).copy()
            trees.append(_Tree(children, normals, offsets, leaf_starts, leaf_data))
        return cls(ids, matrix, trees, leaf_capacity, seed)


class _TreeBuilder:
    def __init__(self, matrix: np.ndarray, leaf_capacity: int, rng: np.random.Generator):
        self.matrix = matrix
        self.leaf_capacity = leaf_capacity
        self.rng = rng
        self.children: list[tuple[int, int]] = []
        self.normals: list[np.ndarray] = []
        self.offsets: list[float] = []
        self.leaves: list[np.ndarray] = []

    def build(self) -> _Tree:
        self._node(np.arange(self.matrix.shape[0], dtype=np.int64), depth=0)
        dim = self.matrix.shape[1]
        leaf_starts = np.zeros(len(self.leaves) + 1, dtype=np.int64)
        for i, leaf in enumerate(self.leaves):
            leaf_starts[i + 1] = leaf_starts[i] + leaf.size
        leaf_data = (
            np.concatenate(self.leaves) if self.leaves else np.empty(0, dtype=np.int64)
        )
        return _Tree(
            children=np.asarray(self.children, dtype=np.int32).reshape(-1, 2),
            normals=np.asarray(self.normals, dtype=np.float64).reshape(-1, dim),
            offsets=np.asarray(self.offsets, dtype=np.float64),
            leaf_starts=leaf_starts,
            leaf_data=leaf_data.astype(np.int64),
        )

    def _node(self, positions: np.ndarray, depth: int) -> int:
        node = len(self.children)
        if positions.size <= self.leaf_capacity or depth >= _MAX_DEPTH:
            return self._leaf(positions)
        self.children.append((0, 0))  # patched below
        normal, offset, left_pos, right_pos = self._split(positions)
        self.normals.append(normal)
        self.offsets.append(offset)
        left = self._node(left_pos, depth + 1)
        right = self._node(right_pos, depth + 1)
        self.children[node] = (left, right)
        return node

    def _leaf(self, positions: np.ndarray) -> int:
        node = len(self.children)
        self.children.append((-1, len(self.leaves)))
        self.normals.append(np.zeros(self.matrix.shape[1]))
        self.offsets.append(0.0)
        self.leaves.append(positions)
        return node

    def _split(self, positions: np.ndarray):
        """Perpendicular bisector of two random points; ties take a random side."""
        pts = self.matrix[positions]
        normal = np.zeros(self.matrix.shape[1])
        offset = 0.0
        for _ in range(_SPLIT_ATTEMPTS):
            i, j = self.rng.choice(positions.size, size=2, replace=False)
            a, b = pts[i], pts[j]
            normal = a - b
            offset = float(normal @ (a + b)) / 2.0
            margins = pts @ normal - offset
            side = margins > 0
            ties = margins == 0
            if ties.any():
                side[ties] = self.rng.random(int(ties.sum())) < 0.5
            if side.any() and not side.all():
                return normal, offset, positions[~side], positions[side]
        # Identical points: every margin ties. Balance with a random permutation.
        perm = self.rng.permutation(positions.size)
        half = positions.size // 2
        return normal, offset, positions[perm[:half]], positions[perm[half:]]


def build_index(
    embeddings: Mapping[str, np.ndarray],
    n_trees: int = 100,
    leaf_capacity: int = 32,
    seed: int = 0,
) -> AnnForest:
    """Build a forest over ``embeddings``; deterministic per (seed, tree index)."""
    if not embeddings:
        raise IndexError_("cannot index an empty embedding collection")
    if leaf_capacity < 1:
        raise IndexError_("leaf_capacity must be >= 1")
    ids = list(embeddings)
    first = np.asarray(embeddings[ids[0]], dtype=np.float64)
    dim = first.shape[0]
    matrix = np.zeros((len(ids), dim))
    for row, doc_id in enumerate(ids):
        vec = np.asarray(embeddings[doc_id], dtype=np.float64)
        if vec.shape != (dim,):
            raise IndexError_(
                f"embedding for {doc_id!r} has shape {vec.shape}, expected ({dim},)"
            )
        matrix[row] = vec
    trees = []
    for tree_index in range(n_trees):
        rng = np.random.default_rng([seed, tree_index])
        trees.append(_TreeBuilder(matrix, leaf_capacity, rng).build())
    return AnnForest(ids, matrix, trees, leaf_capacity, seed)


def default_search_budget(n_trees: int, k: int) -> int:
    return n_trees * k * 40


def _rank_positions(
    ids_array: np.ndarray, positions: np.ndarray, sims: np.ndarray, k: int
) -> list[tuple[str, float]]:
    # Descending similarity, ascending id on ties (ids are unique, so total).
    names = ids_array[positions]
    order = np.lexsort((names, -sims))[:k]
    return [(str(names[i]), float(sims[i])) for i in order]


def query_index(
    forest: AnnForest,
    q: np.ndarray,
    k: int,
    search_budget: int | None = None,
) -> Neighbors:
    """Top-k approximate neighbors of ``q`` by cosine, descending, ties by id.

    All trees share one priority queue keyed by the minimum hyperplane margin
    along the path, so leaves nearest the query across the whole forest are
    inspected first. Traversal stops once at least ``search_budget`` leaf
    items have been collected; the exact cosine is then computed for every
    distinct candidate.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (forest.dim,):
        raise IndexError_(f"query has shape {q.shape}, expected ({forest.dim},)")
    if k < 1:
        raise IndexError_("k must be >= 1")
    budget = default_search_budget(forest.n_trees, k) if search_budget is None else search_budget

    capped = False
    if k > len(forest.ids):
        logger.warning("k=%d exceeds collection size %d", k, len(forest.ids))
        k = len(forest.ids)
        capped = True

    heap: list[tuple[float, int, int, int]] = []
    counter = 0
    for tree_index in range(forest.n_trees):
        heap.append((-np.inf, counter, tree_index, 0))
        counter += 1
    heapq.heapify(heap)

    collected: list[np.ndarray] = []
    inspected = 0
    while heap and inspected < budget:
        neg_priority, _, tree_index, node = heapq.heappop(heap)
        priority = -neg_priority
        tree = forest.trees[tree_index]
        left, right = tree.children[node]
        if left == -1:
            items = tree.leaf_items(int(right))
            collected.append(items)
            inspected += items.size
            continue
        margin = float(tree.normals[node] @ q - tree.offsets[node])
        heapq.heappush(heap, (-min(priority, margin), counter, tree_index, int(right)))
        counter += 1
        heapq.heappush(heap, (-min(priority, -margin), counter, tree_index, int(left)))
        counter += 1

    if collected:
        positions = np.unique(np.concatenate(collected))
    else:
        positions = np.empty(0, dtype=np.int64)
    sims = cosine_against_matrix(forest.matrix[positions], q)
    return Neighbors(_rank_positions(forest.ids_array, positions, sims, k), capped)


def brute_force_knn(
    embeddings: Mapping[str, np.ndarray], q: np.ndarray, k: int
) -> list[tuple[str, float]]:
    """Exact top-k by cosine; the testing oracle for :func:`query_index`."""
    ids = list(embeddings)
    matrix = np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in ids])
    sims = cosine_against_matrix(matrix, np.asarray(q, dtype=np.float64))
    positions = np.arange(len(ids), dtype=np.int64)
    return _rank_positions(np.asarray(ids), positions, sims, min(k, len(ids)))
