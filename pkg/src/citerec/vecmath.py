"""Small numeric helpers shared by the embedding and reranking models."""

from __future__ import annotations

import numpy as np

# Guard added to normalization denominators so zero vectors stay zero.
EPS = 1e-12


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(x))


def elu_grad(x: np.ndarray) -> np.ndarray:
    # d/dx elu(x) = 1 for x > 0, exp(x) otherwise.
    return np.where(x > 0, 1.0, np.exp(x))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / ((na + EPS) * (nb + EPS))


def cosine_backward(
    a: np.ndarray, b: np.ndarray, upstream: float
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``upstream * cosine(a, b)`` w.r.t. ``a`` and ``b``.

    Differentiates the guarded expression used in :func:`cosine` exactly, so
    finite differences of the forward pass match. Zero-norm inputs get zero
    gradients (the forward value is pinned at 0 there).
    """
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return np.zeros_like(a), np.zeros_like(b)
    dot = float(a @ b)
    denom = (na + EPS) * (nb + EPS)
    g_a = upstream * (b / denom - dot * a / (na * (na + EPS) ** 2 * (nb + EPS)))
    g_b = upstream * (a / denom - dot * b / (nb * (nb + EPS) ** 2 * (na + EPS)))
    return g_a, g_b


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm; zero rows stay zero."""
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / (norms + EPS)


def cosine_against_matrix(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Cosine similarity of ``q`` against every row of ``matrix``.

    Shared by the exact scorer and the index search path. The reduction runs
    per row (not through BLAS matrix kernels whose blocking depends on the
    matrix height), so a row's similarity is bit-identical whether it is
    scored inside a candidate subset or against the full collection.
    """
    nq = float(np.linalg.norm(q))
    if nq == 0.0:
        return np.zeros(matrix.shape[0])
    dots = (matrix * q).sum(axis=1)
    norms = np.sqrt((matrix * matrix).sum(axis=1))
    sims = dots / ((norms + EPS) * (nq + EPS))
    sims[norms == 0.0] = 0.0
    return sims
