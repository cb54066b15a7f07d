"""Offline debiasing algorithms trained on click-labeled batches.

Four algorithms share the same contract (consume an
:class:`~unbiased_ltr.feeds.InputFeedBatch`, update the scorer, report
the step loss):

* ``ipw``  - inverse propensity weighting with a fixed examination
  table (Wang et al. 2016; Joachims et al. 2017).  With the all-ones
  table this is exactly naive click training.
* ``dla``  - dual learning: a per-rank examination model is trained
  jointly with the ranker, each providing the other's inverse weights
  (Ai et al. 2018).
* ``rem``  - regression EM over latent examination/relevance
  (Wang et al. 2018): posterior targets for the scorer, moving-average
  updates for the per-rank examination estimate.
* ``pd``   - pairwise debiasing (Hu et al. 2019): clipped inverse
  click/non-click propensities on click>skip pairs, propensities
  re-estimated from the pairwise loss mass.

All inverse weights are clipped at
:data:`~unbiased_ltr.propensity.MAX_INVERSE_WEIGHT`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses, scorers
from .feeds import InputFeedBatch
from .optimizers import make_optimizer
from .propensity import MAX_INVERSE_WEIGHT, PropensityTable

LOSS_FUNCTIONS = {
    "softmax": losses.softmax_loss,
    "sigmoid": losses.sigmoid_loss,
    "pairwise": losses.pairwise_loss,
}

REM_EMA_DECAY = 0.99
PD_EMA_DECAY = 0.99
PROB_EPS = 1e-6


@dataclass
class TrainStepReport:
    """Loss and diagnostics for one training step."""

    loss: float
    step: int
    aux: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.loss):
            raise FloatingPointError(f"non-finite loss at step {self.step}: {self.loss}")


def resolve_loss(name: str):
    key = name.strip().lower().replace(" ", "_").removesuffix("_loss")
    if key not in LOSS_FUNCTIONS:
        raise ValueError(
            f"unknown loss function {name!r}, expected one of {sorted(LOSS_FUNCTIONS)}"
        )
    return LOSS_FUNCTIONS[key]


class ClickTrainingAlgorithm:
    """Shared scorer plumbing for the offline algorithms."""

    def __init__(
        self,
        scorer_spec: scorers.ScorerSpec,
        params: scorers.ScorerParams,
        learning_rate: float = 0.05,
        max_gradient_norm: float = 5.0,
        grad_strategy: str = "ada",
        loss_function: str = "softmax",
        l2_loss: float = 0.0,
    ):
        self.scorer_spec = scorer_spec
        self.params = params
        self.loss_fn = resolve_loss(loss_function)
        self.optimizer = make_optimizer(
            grad_strategy, learning_rate, max_gradient_norm, l2_loss
        )
        self.step = 0

    def scores_batch(self, features: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Forward pass with current parameters (evaluation path)."""
        return scorers.forward_batch(self.params, self.scorer_spec, features, mask)

    def _apply_gradient(self, grad_theta: np.ndarray) -> None:
        new_theta = self.optimizer.step(self.params.theta, grad_theta)
        if not np.all(np.isfinite(new_theta)):
            raise FloatingPointError(f"non-finite parameters after step {self.step}")
        self.params = scorers.ScorerParams(new_theta, self.params.layer_dims)

    def state_dict(self) -> dict:
        return {
            "params": scorers.params_to_dict(self.params),
            "optimizer": self.optimizer.state_dict(),
            "step": self.step,
        }

    def load_state_dict(self, state: dict) -> None:
        self.params = scorers.params_from_dict(state["params"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.step = int(state["step"])


class IpwRank(ClickTrainingAlgorithm):
    """Inverse propensity weighted training with a fixed examination table."""

    def __init__(self, scorer_spec, params, table: PropensityTable, **hparams):
        if table is None:
            raise ValueError("ipw needs a propensity table")
        super().__init__(scorer_spec, params, **hparams)
        self.table = table

    def train_step(self, batch: InputFeedBatch, rng=None) -> TrainStepReport:
        self.step += 1
        if batch.list_size > len(self.table) and np.any(
            batch.mask[:, len(self.table):]
        ):
            raise ValueError(
                f"propensity table covers {len(self.table)} ranks, batch has "
                f"valid documents at rank {batch.list_size}"
            )
        weights = np.ones(batch.list_size)
        k = min(len(self.table), batch.list_size)
        weights[:k] = self.table.inverse_weights()[:k]
        wl = losses.WeightedLabels(
            batch.labels, np.broadcast_to(weights, batch.labels.shape), batch.mask
        )
        sg = scorers.forward_batch_with_grad(
            self.params, self.scorer_spec, batch.features, batch.mask
        )
        loss, dscores = self.loss_fn(sg.scores, wl)
        self._apply_gradient(sg.pullback(dscores))
        return TrainStepReport(loss=loss, step=self.step)


def weighted_click_cross_entropy(
    scores: np.ndarray, weighted_clicks: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Importance-weighted listwise cross entropy without label normalization.

    The loss is ``-mean over lists of sum_k wc_k * log softmax(scores)_k``
    with the weights already folded into the click labels.  Keeping the
    raw weighted sum (no per-list renormalization) is what makes inverse
    weights cancel the factor they target in expectation; both dual
    learning updates rely on that.
    """
    log_p = losses.masked_log_softmax(np.atleast_2d(scores), mask)
    p = np.where(mask, np.exp(log_p), 0.0)
    n_lists = scores.shape[0]
    wc = np.where(mask, weighted_clicks, 0.0)
    loss = float(-(wc * log_p).sum() / n_lists)
    grad = (-wc + wc.sum(axis=1, keepdims=True) * p) / n_lists
    return loss, np.where(mask, grad, 0.0)


class DlaRank(ClickTrainingAlgorithm):
    """Dual learning: ranker and per-rank examination logits co-trained.

    The examination model is a free logit vector over ranks, mapped
    through softmax; its inverse (rank-1-normalized, clipped) weights
    the clicks in the ranker's update, while the inverse of the ranker's
    softmax relevance weights the clicks in the examination update.
    Both updates use :func:`weighted_click_cross_entropy`; configurable
    loss functions are not supported here because the two inverse
    weightings only cancel examination/relevance under the raw weighted
    listwise form.
    """

    def __init__(self, scorer_spec, params, cutoff: int, **hparams):
        super().__init__(scorer_spec, params, **hparams)
        if cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        self.propensity_logits = np.zeros(cutoff)
        self.propensity_optimizer = make_optimizer(
            hparams.get("grad_strategy", "ada"),
            hparams.get("learning_rate", 0.05),
            hparams.get("max_gradient_norm", 5.0),
        )

    def examination_ratios(self) -> np.ndarray:
        """Current examination curve, rank-1-normalized."""
        exam = _softmax(self.propensity_logits)
        return exam / exam[0]

    def train_step(self, batch: InputFeedBatch, rng=None) -> TrainStepReport:
        self.step += 1
        n_ranks = len(self.propensity_logits)
        if batch.list_size > n_ranks and np.any(batch.mask[:, n_ranks:]):
            raise ValueError("batch has valid documents beyond the examination model")
        sg = scorers.forward_batch_with_grad(
            self.params, self.scorer_spec, batch.features, batch.mask
        )

        exam = _softmax(self.propensity_logits)[: batch.list_size]
        rank_weights = np.minimum(exam[0] / exam, MAX_INVERSE_WEIGHT)
        rank_loss, dscores = weighted_click_cross_entropy(
            sg.scores, batch.labels * rank_weights[None, :], batch.mask
        )
        self._apply_gradient(sg.pullback(dscores))

        # relevance weights from the (pre-update) scores, mirrored clipping
        rel = _masked_softmax(sg.scores, batch.mask)
        rel_weights = np.minimum(
            rel[:, :1] / np.maximum(rel, 1e-12), MAX_INVERSE_WEIGHT
        )
        phi_scores = np.broadcast_to(
            self.propensity_logits[: batch.list_size], batch.labels.shape
        )
        prop_loss, dphi = weighted_click_cross_entropy(
            phi_scores, batch.labels * rel_weights, batch.mask
        )
        grad_phi = np.zeros(n_ranks)
        grad_phi[: batch.list_size] = dphi.sum(axis=0)
        self.propensity_logits = self.propensity_optimizer.step(
            self.propensity_logits, grad_phi
        )
        return TrainStepReport(
            loss=rank_loss, step=self.step, aux={"propensity_loss": prop_loss}
        )

    def state_dict(self) -> dict:
        state = super().state_dict()
        state["propensity_logits"] = self.propensity_logits.tolist()
        state["propensity_optimizer"] = self.propensity_optimizer.state_dict()
        return state

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        self.propensity_logits = np.asarray(state["propensity_logits"], dtype=np.float64)
        self.propensity_optimizer.load_state_dict(state["propensity_optimizer"])


def examination_relevance_posteriors(
    gamma: np.ndarray, rel: np.ndarray, clicks: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior examination/relevance probabilities given clicks.

    A click implies both examined and relevant.  For non-clicks, with
    prior examination gamma and relevance rel:

        P(examined | no click)  = gamma * (1 - rel) / (1 - gamma * rel)
        P(relevant | no click)  = rel * (1 - gamma) / (1 - gamma * rel)
    """
    gamma = np.clip(np.asarray(gamma, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    rel = np.clip(np.asarray(rel, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    denom = 1.0 - gamma * rel
    post_exam = np.where(clicks > 0, 1.0, gamma * (1.0 - rel) / denom)
    post_rel = np.where(clicks > 0, 1.0, rel * (1.0 - gamma) / denom)
    return post_exam, post_rel


def click_log_likelihood(
    gamma: np.ndarray, rel: np.ndarray, clicks: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """Bernoulli log likelihood of clicks under click = examined and relevant."""
    gamma = np.clip(np.asarray(gamma, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    rel = np.clip(np.asarray(rel, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    p = np.clip(gamma * rel, PROB_EPS, 1.0 - PROB_EPS)
    ll = np.where(clicks > 0, np.log(p), np.log(1.0 - p))
    if mask is not None:
        ll = np.where(mask, ll, 0.0)
    return float(ll.sum())


class RemRank(ClickTrainingAlgorithm):
    """Regression EM: alternate click posteriors and model regression.

    E-step computes examination/relevance posteriors from the current
    per-rank examination estimate and sigmoid relevance; M-step nudges
    the examination estimate toward the batch posterior mean (moving
    average) and regresses the scorer on the relevance posteriors.
    """

    def __init__(self, scorer_spec, params, cutoff: int, **hparams):
        # the regression target is a probability, so the scorer update is
        # always pointwise sigmoid regardless of the configured loss
        hparams["loss_function"] = "sigmoid"
        super().__init__(scorer_spec, params, **hparams)
        if cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        self.exam_probs = np.full(cutoff, 0.5)

    def train_step(self, batch: InputFeedBatch, rng=None) -> TrainStepReport:
        self.step += 1
        sg = scorers.forward_batch_with_grad(
            self.params, self.scorer_spec, batch.features, batch.mask
        )
        rel = losses.sigmoid(sg.scores)
        gamma = self.exam_probs[: batch.list_size]
        post_exam, post_rel = examination_relevance_posteriors(
            gamma, rel, batch.labels
        )
        if not (np.all(np.isfinite(post_exam)) and np.all(np.isfinite(post_rel))):
            raise FloatingPointError("EM posteriors left (0, 1)")

        # M-step for the examination curve: per-rank posterior mean, EMA
        counts = batch.mask.sum(axis=0)
        sums = np.where(batch.mask, post_exam, 0.0).sum(axis=0)
        seen = counts > 0
        target = np.where(seen, sums / np.maximum(counts, 1), gamma)
        new_gamma = REM_EMA_DECAY * gamma + (1.0 - REM_EMA_DECAY) * target
        self.exam_probs[: batch.list_size] = np.clip(
            new_gamma, PROB_EPS, 1.0 - PROB_EPS
        )

        # M-step for the scorer: regress on relevance posteriors
        wl = losses.WeightedLabels(np.where(batch.mask, post_rel, 0.0), None, batch.mask)
        loss, dscores = losses.sigmoid_loss(sg.scores, wl)
        self._apply_gradient(sg.pullback(dscores))
        ll = click_log_likelihood(gamma, rel, batch.labels, batch.mask)
        return TrainStepReport(
            loss=loss, step=self.step, aux={"click_log_likelihood": ll}
        )

    def state_dict(self) -> dict:
        state = super().state_dict()
        state["exam_probs"] = self.exam_probs.tolist()
        return state

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        self.exam_probs = np.asarray(state["exam_probs"], dtype=np.float64)


class PdRank(ClickTrainingAlgorithm):
    """Pairwise debiasing over click>skip pairs.

    Pair weights are clipped ``1 / (exam_plus[click rank] *
    exam_minus[skip rank])``; both curves are re-estimated from the
    accumulated pairwise loss mass per rank, renormalized to 1 at
    rank 1.
    """

    def __init__(self, scorer_spec, params, cutoff: int, **hparams):
        super().__init__(scorer_spec, params, **hparams)
        if cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        self.exam_plus = np.ones(cutoff)
        self.exam_minus = np.ones(cutoff)
        self._mass_plus = np.zeros(cutoff)
        self._mass_minus = np.zeros(cutoff)

    def train_step(self, batch: InputFeedBatch, rng=None) -> TrainStepReport:
        self.step += 1
        sg = scorers.forward_batch_with_grad(
            self.params, self.scorer_spec, batch.features, batch.mask
        )
        scores = sg.scores
        clicked = (batch.labels > 0) & batch.mask
        skipped = (batch.labels <= 0) & batch.mask
        rows, pos_idx, neg_idx = _click_skip_pairs(clicked, skipped)
        if rows.size == 0:
            return TrainStepReport(loss=0.0, step=self.step, aux={"n_pairs": 0.0})

        pair_weights = np.minimum(
            1.0 / (self.exam_plus[pos_idx] * self.exam_minus[neg_idx]),
            MAX_INVERSE_WEIGHT,
        )
        pos_scores = scores[rows, pos_idx]
        neg_scores = scores[rows, neg_idx]
        loss, (dpos, dneg) = losses.pairwise_cross_entropy_loss(
            pos_scores, neg_scores, pair_weights
        )
        n_lists = batch.n_lists
        dscores = np.zeros_like(scores)
        np.add.at(dscores, (rows, pos_idx), dpos / n_lists)
        np.add.at(dscores, (rows, neg_idx), dneg / n_lists)
        self._apply_gradient(sg.pullback(dscores))

        # propensity re-estimation from unweighted pairwise loss mass
        raw = np.logaddexp(0.0, -(pos_scores - neg_scores))
        mass_plus = np.bincount(pos_idx, weights=raw, minlength=len(self.exam_plus))
        mass_minus = np.bincount(neg_idx, weights=raw, minlength=len(self.exam_minus))
        self._mass_plus = PD_EMA_DECAY * self._mass_plus + (1 - PD_EMA_DECAY) * mass_plus
        self._mass_minus = (
            PD_EMA_DECAY * self._mass_minus + (1 - PD_EMA_DECAY) * mass_minus
        )
        if self._mass_plus[0] > 0.0:
            self.exam_plus = np.maximum(self._mass_plus / self._mass_plus[0], PROB_EPS)
        if self._mass_minus[0] > 0.0:
            self.exam_minus = np.maximum(
                self._mass_minus / self._mass_minus[0], PROB_EPS
            )
        return TrainStepReport(
            loss=loss / n_lists, step=self.step, aux={"n_pairs": float(rows.size)}
        )

    def state_dict(self) -> dict:
        state = super().state_dict()
        state["exam_plus"] = self.exam_plus.tolist()
        state["exam_minus"] = self.exam_minus.tolist()
        state["mass_plus"] = self._mass_plus.tolist()
        state["mass_minus"] = self._mass_minus.tolist()
        return state

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        self.exam_plus = np.asarray(state["exam_plus"], dtype=np.float64)
        self.exam_minus = np.asarray(state["exam_minus"], dtype=np.float64)
        self._mass_plus = np.asarray(state["mass_plus"], dtype=np.float64)
        self._mass_minus = np.asarray(state["mass_minus"], dtype=np.float64)


def _click_skip_pairs(clicked: np.ndarray, skipped: np.ndarray):
    """Indices of all (clicked, skipped) pairs within each list."""
    pair = clicked[:, :, None] & skipped[:, None, :]
    rows, pos_idx, neg_idx = np.nonzero(pair)
    return rows, pos_idx, neg_idx


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x)
    e = np.exp(z)
    return e / e.sum()


def _masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    row_max = np.max(np.where(mask, scores, -np.inf), axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(np.where(mask, scores, 0.0) - row_max), 0.0)
    total = e.sum(axis=1, keepdims=True)
    return e / np.where(total > 0.0, total, 1.0)
