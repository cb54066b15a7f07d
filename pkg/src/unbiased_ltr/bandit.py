"""Online learning-to-rank algorithms driven by per-session interactions.

Duel-style algorithms (Yue & Joachims 2009 and extensions) perturb the
scorer, show competing rankings to the simulated user and step toward
perturbations that win clicks:

* ``dbgd`` - one perturbation per interaction.
* ``mgd``  - several perturbations multileaved together
  (Schuth et al. 2016); the update averages all winning directions.
* ``nsgd`` - like mgd but new perturbations are sampled orthogonal to
  recently losing directions (Wang et al. 2018).

``pdgd`` (Oosterhuis & de Rijke 2018) instead samples the served list
from the Plackett-Luce distribution over current scores and weights
click>skip pairs by the probability that the swapped list would have
been shown, giving a differentiable unbiased gradient estimate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import scorers
from .click_models import ClickModelSpec, simulate
from .counterfactual import TrainStepReport
from .feeds import InputFeedBatch, SessionView, rank_by_scores, sample_plackett_luce
from .losses import pairwise_cross_entropy_loss, sigmoid
from .optimizers import make_optimizer

SERVE_MODES = ("deterministic", "stochastic")


@dataclass(frozen=True)
class Candidate:
    """A perturbed parameter vector and the unit direction that produced it."""

    params: scorers.ScorerParams
    direction: np.ndarray


@dataclass(frozen=True)
class InterleavedList:
    """A merged ranking with per-slot team credit assignment."""

    order: np.ndarray  # merged document identifiers
    teams: np.ndarray  # contributing team index per slot


def team_draft_interleave(lists, rng: np.random.Generator) -> InterleavedList:
    """Classic team-draft interleaving/multileaving.

    Teams pick in a fresh random order each round; every pick appends
    the team's highest-ranked document not yet placed and claims credit
    for that slot.  All lists must rank the same document set.
    """
    lists = [np.asarray(lst) for lst in lists]
    if len(lists) < 2:
        raise ValueError("interleaving needs at least two lists")
    doc_set = set(lists[0].tolist())
    for lst in lists[1:]:
        if set(lst.tolist()) != doc_set:
            raise ValueError("all lists must rank the same documents")
    n_docs = len(doc_set)
    order: list = []
    teams: list[int] = []
    placed: set = set()
    cursors = [0] * len(lists)
    while len(placed) < n_docs:
        for team in rng.permutation(len(lists)):
            lst = lists[team]
            cursor = cursors[team]
            while cursor < n_docs and lst[cursor] in placed:
                cursor += 1
            cursors[team] = cursor
            if cursor < n_docs:
                doc = lst[cursor]
                order.append(doc)
                teams.append(int(team))
                placed.add(doc)
    return InterleavedList(order=np.asarray(order), teams=np.asarray(teams, dtype=np.int64))


def credit_clicks(il: InterleavedList, clicks: np.ndarray) -> np.ndarray:
    """Per-team click counts; ``clicks`` aligns with the merged order prefix."""
    clicks = np.asarray(clicks)
    n_teams = int(il.teams.max()) + 1 if len(il.teams) else 0
    credits = np.zeros(n_teams, dtype=np.int64)
    for slot, click in enumerate(clicks):
        if click:
            credits[il.teams[slot]] += 1
    return credits


def plackett_luce_log_prob(scores: np.ndarray, permutation: np.ndarray) -> float:
    """Log probability of a permutation under sequential softmax choice."""
    s = np.asarray(scores, dtype=np.float64)[np.asarray(permutation)]
    suffix_lse = np.logaddexp.accumulate(s[::-1])[::-1]
    return float(np.sum(s - suffix_lse))


def plackett_luce_prob(scores: np.ndarray, permutation: np.ndarray) -> float:
    return float(np.exp(plackett_luce_log_prob(scores, permutation)))


class NullSpaceHistory:
    """Ring buffer of recently losing unit directions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buffer: deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._buffer)

    def append(self, direction: np.ndarray) -> None:
        self._buffer.append(np.asarray(direction, dtype=np.float64))

    def matrix(self) -> np.ndarray | None:
        if not self._buffer:
            return None
        return np.stack(list(self._buffer))

    def state_dict(self) -> dict:
        return {"capacity": self.capacity, "entries": [d.tolist() for d in self._buffer]}

    def load_state_dict(self, state: dict) -> None:
        self.capacity = int(state["capacity"])
        self._buffer = deque(
            (np.asarray(d, dtype=np.float64) for d in state["entries"]),
            maxlen=self.capacity,
        )


def sample_unit_direction(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def sample_null_space_direction(
    dim: int,
    history: NullSpaceHistory,
    rng: np.random.Generator,
    attempts: int = 10,
) -> np.ndarray:
    """Unit direction orthogonal to every stored losing direction.

    With an empty history this is plain uniform sphere sampling.
    Raises after ``attempts`` draws that collapse into the span.
    """
    h = history.matrix()
    if h is None:
        return sample_unit_direction(dim, rng)
    q = np.linalg.qr(h.T)[0]
    for _ in range(attempts):
        v = rng.standard_normal(dim)
        v = v - q @ (q.T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            return v / norm
    raise RuntimeError(
        f"could not sample a null-space direction in {attempts} attempts"
    )


class DuelingBanditBase:
    """Shared duel machinery: perturb, serve, credit clicks, update."""

    n_candidates = 1

    def __init__(
        self,
        scorer_spec: scorers.ScorerSpec,
        params: scorers.ScorerParams,
        cutoff: int,
        serve_mode: str = "stochastic",
        learning_rate: float = 0.01,
        delta: float = 1.0,
        need_interleave: bool = True,
        **_,
    ):
        if serve_mode not in SERVE_MODES:
            raise ValueError(f"unknown serve mode {serve_mode!r}")
        if cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        self.scorer_spec = scorer_spec
        self.params = params
        self.cutoff = cutoff
        self.serve_mode = serve_mode
        self.alpha = learning_rate
        self.delta = delta
        self.need_interleave = need_interleave
        self.step = 0

    def scores_batch(self, features: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return scorers.forward_batch(self.params, self.scorer_spec, features, mask)

    def _serve(self, scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.serve_mode == "deterministic":
            return rank_by_scores(scores)
        return sample_plackett_luce(scores, rng)

    def _sample_direction(self, rng: np.random.Generator) -> np.ndarray:
        return sample_unit_direction(self.params.theta.shape[0], rng)

    def _record_losers(self, losers: list[Candidate]) -> None:
        pass

    def train_step_session(
        self,
        session: SessionView,
        click_spec: ClickModelSpec,
        rng: np.random.Generator,
        click_rng: np.random.Generator | None = None,
    ) -> TrainStepReport:
        """One interaction: duel the incumbent against fresh perturbations."""
        click_rng = rng if click_rng is None else click_rng
        self.step += 1
        candidates = []
        for _ in range(self.n_candidates):
            direction = self._sample_direction(rng)
            candidates.append(
                Candidate(
                    scorers.ScorerParams(
                        self.params.theta + self.delta * direction,
                        self.params.layer_dims,
                    ),
                    direction,
                )
            )
        rankers = [self.params] + [c.params for c in candidates]
        lists = [
            self._serve(scorers.forward(p, self.scorer_spec, session.features), rng)
            for p in rankers
        ]
        if self.need_interleave:
            il = team_draft_interleave(lists, rng)
            shown = il.order[: self.cutoff]
            record = simulate(click_spec, session.grades[shown], click_rng)
            credit_vec = np.zeros(len(lists), dtype=np.int64)
            partial = credit_clicks(
                InterleavedList(shown, il.teams[: self.cutoff]), record.clicks
            )
            credit_vec[: len(partial)] = partial
        else:
            credit_vec = np.array(
                [
                    simulate(
                        click_spec, session.grades[lst[: self.cutoff]], click_rng
                    ).clicks.sum()
                    for lst in lists
                ],
                dtype=np.int64,
            )
        incumbent_credit = credit_vec[0]
        # a candidate whose ranking equals the incumbent's is a tie by
        # definition; interleaved credit between identical lists is a coin flip
        distinct = [
            not np.array_equal(lst, lists[0]) for lst in lists[1:]
        ]
        winners = [
            c
            for c, credit, diff in zip(candidates, credit_vec[1:], distinct)
            if diff and credit > incumbent_credit
        ]
        losers = [
            c
            for c, credit, diff in zip(candidates, credit_vec[1:], distinct)
            if not diff or credit <= incumbent_credit
        ]
        self._record_losers(losers)
        if winners:
            mean_dir = np.mean([w.direction for w in winners], axis=0)
            norm = np.linalg.norm(mean_dir)
            if norm > 0.0:
                self.params = scorers.update_toward(
                    self.params, mean_dir / norm, self.alpha
                )
        margin = float(credit_vec[1:].max(initial=0) - incumbent_credit)
        return TrainStepReport(
            loss=-margin,
            step=self.step,
            aux={
                "incumbent_clicks": float(incumbent_credit),
                "n_winners": float(len(winners)),
            },
        )

    def train_step_sessions(
        self,
        sessions: list[SessionView],
        click_spec: ClickModelSpec,
        rng: np.random.Generator,
        click_rng: np.random.Generator | None = None,
    ) -> TrainStepReport:
        """Run one interaction per session; reports the last interaction."""
        report = TrainStepReport(loss=0.0, step=self.step)
        for session in sessions:
            report = self.train_step_session(session, click_spec, rng, click_rng)
        return report

    def state_dict(self) -> dict:
        return {
            "params": scorers.params_to_dict(self.params),
            "step": self.step,
        }

    def load_state_dict(self, state: dict) -> None:
        self.params = scorers.params_from_dict(state["params"])
        self.step = int(state["step"])


class DbgdRank(DuelingBanditBase):
    """Dueling bandit gradient descent: a single perturbation per duel."""

    n_candidates = 1


class MgdRank(DuelingBanditBase):
    """Multileave gradient descent: several perturbations per duel."""

    def __init__(self, scorer_spec, params, cutoff, n_candidates: int = 4, **kwargs):
        super().__init__(scorer_spec, params, cutoff, **kwargs)
        if n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        self.n_candidates = n_candidates


class NsgdRank(MgdRank):
    """Null-space gradient descent: avoid recently losing directions."""

    def __init__(
        self,
        scorer_spec,
        params,
        cutoff,
        n_candidates: int = 4,
        null_space_capacity: int = 10,
        **kwargs,
    ):
        super().__init__(scorer_spec, params, cutoff, n_candidates=n_candidates, **kwargs)
        dim = params.theta.shape[0]
        if null_space_capacity >= dim:
            raise ValueError(
                f"null_space_capacity {null_space_capacity} would let the history "
                f"span the whole {dim}-dimensional parameter space; use a smaller "
                "capacity or a larger model"
            )
        self.history = NullSpaceHistory(null_space_capacity)

    def _sample_direction(self, rng: np.random.Generator) -> np.ndarray:
        return sample_null_space_direction(
            self.params.theta.shape[0], self.history, rng
        )

    def _record_losers(self, losers: list[Candidate]) -> None:
        for loser in losers:
            self.history.append(loser.direction)

    def state_dict(self) -> dict:
        state = super().state_dict()
        state["history"] = self.history.state_dict()
        return state

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        self.history.load_state_dict(state["history"])


def pdgd_pair_weight(scores: np.ndarray, pos: int, neg: int) -> float:
    """Debiasing weight for a click>skip pair on a served list.

    The weight is P(swapped list) / (P(list) + P(swapped list)) under
    the Plackett-Luce model on the given scores, where the swapped list
    exchanges the two documents' positions.
    """
    n = len(scores)
    base = np.arange(n)
    swapped = base.copy()
    swapped[pos], swapped[neg] = swapped[neg], swapped[pos]
    log_orig = plackett_luce_log_prob(scores, base)
    log_swap = plackett_luce_log_prob(scores, swapped)
    return float(sigmoid(np.array([log_swap - log_orig]))[0])


def qualifying_pdgd_pairs(clicks: np.ndarray) -> list[tuple[int, int]]:
    """(clicked, skipped) index pairs considered by the pairwise update.

    A skipped document qualifies when shown above the click or at most
    one position below it.
    """
    clicked = np.flatnonzero(clicks > 0)
    skipped = np.flatnonzero(clicks <= 0)
    return [(int(i), int(j)) for i in clicked for j in skipped if j < i + 2]


class PdgdRank:
    """Pairwise differentiable gradient descent on served-list batches.

    Expects batches whose rows are served lists (the stochastic online
    feed, or the offline click feed with the logged order standing in
    as the served list).
    """

    def __init__(
        self,
        scorer_spec: scorers.ScorerSpec,
        params: scorers.ScorerParams,
        learning_rate: float = 0.05,
        max_gradient_norm: float = 5.0,
        grad_strategy: str = "ada",
        l2_loss: float = 0.0,
        **_,
    ):
        self.scorer_spec = scorer_spec
        self.params = params
        self.optimizer = make_optimizer(
            grad_strategy, learning_rate, max_gradient_norm, l2_loss
        )
        self.step = 0

    def scores_batch(self, features: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return scorers.forward_batch(self.params, self.scorer_spec, features, mask)

    def train_step(self, batch: InputFeedBatch, rng=None) -> TrainStepReport:
        self.step += 1
        sg = scorers.forward_batch_with_grad(
            self.params, self.scorer_spec, batch.features, batch.mask
        )
        pos_scores, neg_scores, weights, locations = [], [], [], []
        for row in range(batch.n_lists):
            n = int(batch.mask[row].sum())
            if n == 0:
                continue
            clicks = batch.labels[row, :n]
            if not np.any(clicks > 0):
                continue
            row_scores = sg.scores[row, :n]
            for i, j in qualifying_pdgd_pairs(clicks):
                pos_scores.append(row_scores[i])
                neg_scores.append(row_scores[j])
                weights.append(pdgd_pair_weight(row_scores, i, j))
                locations.append((row, i, j))
        if not locations:
            return TrainStepReport(loss=0.0, step=self.step, aux={"n_pairs": 0.0})

        loss, (dpos, dneg) = pairwise_cross_entropy_loss(
            np.asarray(pos_scores), np.asarray(neg_scores), np.asarray(weights)
        )
        n_lists = batch.n_lists
        dscores = np.zeros_like(sg.scores)
        for (row, i, j), gp, gn in zip(locations, dpos, dneg):
            dscores[row, i] += gp / n_lists
            dscores[row, j] += gn / n_lists
        new_theta = self.optimizer.step(self.params.theta, sg.pullback(dscores))
        if not np.all(np.isfinite(new_theta)):
            raise FloatingPointError(f"non-finite parameters after step {self.step}")
        self.params = scorers.ScorerParams(new_theta, self.params.layer_dims)
        return TrainStepReport(
            loss=loss / n_lists,
            step=self.step,
            aux={"n_pairs": float(len(locations))},
        )

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
