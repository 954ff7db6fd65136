"""Adaptive-moment gradient descent shared by both trainable models."""

from __future__ import annotations

import numpy as np


class TrainingError(RuntimeError):
    """Raised when training produces non-finite losses or gradients."""


class Adam:
    """Adam over a named dict of parameter arrays, updated in place."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if self.lr == 0.0:
            return
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, theta in self.params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            theta -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def add_penalty_gradients(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    l1: float,
    l2: float,
) -> None:
    """Add gradients of ``l1 * sum|theta| + l2 * sum theta^2`` to ``grads``."""
    if l1 == 0.0 and l2 == 0.0:
        return
    for key, theta in params.items():
        if l1 != 0.0:
            grads[key] += l1 * np.sign(theta)
        if l2 != 0.0:
            grads[key] += 2.0 * l2 * theta


def check_finite(loss: float, grads: dict[str, np.ndarray], where: str) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss at {where}")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {key!r} at {where}")
