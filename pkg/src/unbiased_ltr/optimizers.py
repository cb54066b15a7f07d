"""Flat-vector gradient optimizers for the training loops.

Both optimizers clip the incoming gradient to ``max_gradient_norm``
(0 disables clipping) and support an optional L2 penalty added to the
gradient as ``l2_loss * theta``.
"""

from __future__ import annotations

import numpy as np

GRAD_STRATEGIES = ("sgd", "ada")


def clip_by_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm <= 0.0:
        return grad
    norm = np.linalg.norm(grad)
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


class SgdOptimizer:
    def __init__(self, learning_rate: float, max_gradient_norm: float = 0.0, l2_loss: float = 0.0):
        self.learning_rate = learning_rate
        self.max_gradient_norm = max_gradient_norm
        self.l2_loss = l2_loss

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.l2_loss > 0.0:
            grad = grad + self.l2_loss * theta
        grad = clip_by_norm(grad, self.max_gradient_norm)
        return theta - self.learning_rate * grad

    def state_dict(self) -> dict:
        return {"kind": "sgd"}

    def load_state_dict(self, state: dict) -> None:
        pass


class AdaGradOptimizer:
    """AdaGrad with per-coordinate accumulated squared gradients."""

    EPS = 1e-10

    def __init__(self, learning_rate: float, max_gradient_norm: float = 0.0, l2_loss: float = 0.0):
        self.learning_rate = learning_rate
        self.max_gradient_norm = max_gradient_norm
        self.l2_loss = l2_loss
        self.accumulator: np.ndarray | None = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.l2_loss > 0.0:
            grad = grad + self.l2_loss * theta
        grad = clip_by_norm(grad, self.max_gradient_norm)
        if self.accumulator is None:
            self.accumulator = np.zeros_like(theta)
        self.accumulator = self.accumulator + grad * grad
        return theta - self.learning_rate * grad / (np.sqrt(self.accumulator) + self.EPS)

    def state_dict(self) -> dict:
        return {
            "kind": "ada",
            "accumulator": None if self.accumulator is None else self.accumulator.tolist(),
        }

    def load_state_dict(self, state: dict) -> None:
        acc = state.get("accumulator")
        self.accumulator = None if acc is None else np.asarray(acc, dtype=np.float64)


def make_optimizer(
    grad_strategy: str,
    learning_rate: float,
    max_gradient_norm: float = 0.0,
    l2_loss: float = 0.0,
):
    if grad_strategy == "sgd":
        return SgdOptimizer(learning_rate, max_gradient_norm, l2_loss)
    if grad_strategy == "ada":
        return AdaGradOptimizer(learning_rate, max_gradient_norm, l2_loss)
    raise ValueError(f"unknown grad_strategy {grad_strategy!r}, expected one of {GRAD_STRATEGIES}")
