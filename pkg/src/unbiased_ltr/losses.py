"""Propensity-weightable ranking losses with analytic score gradients.

Every loss takes scores plus :class:`WeightedLabels` (labels, per-rank
weights, validity mask) and returns ``(loss, dloss_dscores)``.  Inputs
may be a single list ``(list_size,)`` or a batch
``(n_lists, list_size)``; batch losses are averaged over lists so the
magnitude is independent of batch size.  Padded ranks never contribute:
they are treated as score -inf in listwise softmax terms and skipped
elsewhere.

Unit weights make each loss exactly its unweighted counterpart; inverse
propensity weighting enters purely through the weight vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_CLAMP = 1e-12


@dataclass
class WeightedLabels:
    """Per-rank labels with propensity weights and a validity mask.

    Labels are clicks in {0,1} or graded relevance; weights default to
    1.0 (unweighted); mask defaults to all-valid.
    """

    labels: np.ndarray
    weights: np.ndarray | None = None
    mask: np.ndarray | None = None

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
        labels = np.asarray(self.labels, dtype=np.float64)
        was_1d = labels.ndim == 1
        labels = np.atleast_2d(labels)
        weights = (
            np.ones_like(labels)
            if self.weights is None
            else np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        )
        mask = (
            np.ones(labels.shape, dtype=bool)
            if self.mask is None
            else np.atleast_2d(np.asarray(self.mask, dtype=bool))
        )
        if weights.shape != labels.shape or mask.shape != labels.shape:
            raise ValueError("labels, weights and mask shapes must match")
        return labels, weights, mask, was_1d


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def masked_log_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log softmax over valid entries; padded entries return 0."""
    neg = np.where(mask, scores, -np.inf)
    row_max = np.max(np.where(mask, scores, -np.inf), axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    shifted = np.where(mask, neg - row_max, -np.inf)
    total = np.sum(np.where(mask, np.exp(shifted), 0.0), axis=1, keepdims=True)
    lse = np.log(np.where(total > 0.0, total, 1.0))
    return np.where(mask, shifted - lse, 0.0)


def softmax_loss(scores: np.ndarray, wl: WeightedLabels) -> tuple[float, np.ndarray]:
    """Listwise softmax cross entropy against labels normalized to sum 1.

    Lists whose labels are all zero contribute zero loss and gradient.
    """
    labels, weights, mask, was_1d = wl.arrays()
    scores2 = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores2.shape != labels.shape:
        raise ValueError("scores and labels shapes must match")
    n_lists = scores2.shape[0]

    labels = np.where(mask, labels, 0.0)
    label_sum = labels.sum(axis=1, keepdims=True)
    active = label_sum[:, 0] > 0.0
    target = np.divide(labels, np.where(label_sum > 0.0, label_sum, 1.0))

    log_p = masked_log_softmax(scores2, mask)
    p = np.where(mask, np.exp(log_p), 0.0)

    wy = weights * target * active[:, None]
    per_list = -(wy * log_p).sum(axis=1)
    loss = float(per_list.sum() / n_lists)

    grad = (-wy + wy.sum(axis=1, keepdims=True) * p) / n_lists
    grad = np.where(mask, grad, 0.0)
    return loss, (grad[0] if was_1d else grad)


def sigmoid_loss(scores: np.ndarray, wl: WeightedLabels) -> tuple[float, np.ndarray]:
    """Pointwise weighted binary cross entropy, averaged over valid ranks."""
    labels, weights, mask, was_1d = wl.arrays()
    scores2 = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores2.shape != labels.shape:
        raise ValueError("scores and labels shapes must match")
    if np.any((labels < 0.0) & mask) or np.any((labels > 1.0) & mask):
        raise ValueError("sigmoid loss labels must lie in [0, 1]")
    n_lists = scores2.shape[0]

    p = np.clip(sigmoid(scores2), PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    n_valid = np.maximum(mask.sum(axis=1, keepdims=True), 1)
    per_rank = np.where(mask, weights * bce, 0.0) / n_valid
    loss = float(per_rank.sum() / n_lists)

    grad = np.where(mask, weights * (p - labels), 0.0) / n_valid / n_lists
    return loss, (grad[0] if was_1d else grad)


def pairwise_loss(scores: np.ndarray, wl: WeightedLabels) -> tuple[float, np.ndarray]:
    """Pairwise logistic loss over in-list pairs ordered by label.

    For every valid pair with ``label_i > label_j`` the term is
    ``w_i * log(1 + exp(-(score_i - score_j)))``: the weight of the
    higher-labeled (clicked) document applies to the pair.
    """
    labels, weights, mask, was_1d = wl.arrays()
    scores2 = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if scores2.shape != labels.shape:
        raise ValueError("scores and labels shapes must match")
    n_lists = scores2.shape[0]

    pair_valid = mask[:, :, None] & mask[:, None, :]
    pair = (labels[:, :, None] > labels[:, None, :]) & pair_valid
    diff = scores2[:, :, None] - scores2[:, None, :]
    losses = np.where(pair, np.logaddexp(0.0, -diff), 0.0)
    w = weights[:, :, None]
    loss = float((w * losses).sum() / n_lists)

    # d softplus(-d)/dd = -(1 - sigmoid(d))
    coeff = np.where(pair, w * (1.0 - sigmoid(diff)), 0.0)
    grad = (-coeff.sum(axis=2) + coeff.sum(axis=1)) / n_lists
    grad = np.where(mask, grad, 0.0)
    return loss, (grad[0] if was_1d else grad)


def pairwise_cross_entropy_loss(
    pos_scores: np.ndarray,
    neg_scores: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Log loss ``-w * log(sigmoid(pos - neg))`` over aligned score pairs.

    Returns the summed loss plus gradients with respect to the positive
    and negative scores.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ValueError("pos and neg score lists must be aligned")
    w = np.ones_like(pos) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != pos.shape:
        raise ValueError("weights must align with score pairs")
    diff = pos - neg
    loss = float(np.sum(w * np.logaddexp(0.0, -diff)))
    coeff = -w * (1.0 - sigmoid(diff))
    return loss, (coeff, -coeff)
