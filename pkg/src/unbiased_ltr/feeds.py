"""Input feeds: assemble training and evaluation batches from a corpus.

Four strategies:

* direct label feed          - true (clamped) relevance grades, logged
  order; used for validation and testing.
* click simulation feed      - clicks simulated on the logged order
  after the selection-bias cutoff (offline setting).
* deterministic online feed  - documents reranked by the current scorer
  snapshot, then clicked.
* stochastic online feed     - served list sampled from the
  Plackett-Luce distribution over current scores, then clicked.

Online feeds take the scorer snapshot explicitly per call; feeds hold
no reference to the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scorers
from .click_models import ClickModelSpec, dynamic_eta, simulate
from .letor import Corpus, PaddingPolicy, QuerySession, apply_cutoff

FEED_NAMES = (
    "direct_label",
    "click_simulation",
    "deterministic_online",
    "stochastic_online",
)

ONLINE_FEEDS = ("deterministic_online", "stochastic_online")


@dataclass
class InputFeedBatch:
    """One batch of per-query rank lists, padded to a fixed list size.

    ``labels`` are clicks for click-driven feeds and relevance grades
    for the direct label feed (or any feed in oracle mode).  ``grades``
    always carries the true grades of the displayed documents; it is
    environment-side information used by online duels and oracle
    propensity checks, never a training signal by itself.
    ``served_list``/``served_scores`` are present iff the feed reranked
    documents with a scorer snapshot.
    """

    query_ids: list[str]
    features: np.ndarray  # (n_lists, list_size, feature_size)
    doc_ids: np.ndarray  # (n_lists, list_size)
    labels: np.ndarray  # (n_lists, list_size)
    mask: np.ndarray  # (n_lists, list_size) bool
    grades: np.ndarray  # (n_lists, list_size) int
    served_list: np.ndarray | None = None
    served_scores: np.ndarray | None = None

    @property
    def n_lists(self) -> int:
        return self.features.shape[0]

    @property
    def list_size(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SessionView:
    """A query's full candidate list, for algorithms that serve their own lists."""

    query_id: str
    doc_ids: np.ndarray
    features: np.ndarray  # (n_docs, feature_size)
    grades: np.ndarray  # (n_docs,)


def rank_by_scores(scores: np.ndarray) -> np.ndarray:
    """Descending score order with stable ties (logged position wins)."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def sample_plackett_luce(scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a permutation from the Plackett-Luce distribution over scores.

    Uses the Gumbel-max trick: descending argsort of scores plus iid
    Gumbel noise is distributed exactly as sequential softmax sampling
    without replacement.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gumbel = rng.gumbel(size=scores.shape)
    return np.argsort(-(scores + gumbel), kind="stable")


def session_view(corpus: Corpus, session: QuerySession) -> SessionView:
    return SessionView(
        query_id=session.query_id,
        doc_ids=session.doc_ids,
        features=corpus.features[session.doc_ids],
        grades=session.labels,
    )


def sample_sessions(
    corpus: Corpus, batch_size: int, rng: np.random.Generator
) -> list[SessionView]:
    """Uniformly sample query sessions (with replacement) as raw views."""
    idx = rng.integers(len(corpus.sessions), size=batch_size)
    return [session_view(corpus, corpus.sessions[i]) for i in idx]


class _FeedBase:
    """Shared batch assembly over a fixed corpus."""

    is_online = False

    def __init__(self, corpus: Corpus, list_size: int):
        if len(corpus.sessions) == 0:
            raise ValueError("corpus has no sessions")
        self.corpus = corpus
        max_len = max(len(s) for s in corpus.sessions)
        self.list_size = list_size if list_size > 0 else max_len
        self.policy = PaddingPolicy(
            list_size=self.list_size, pad_doc_id=corpus.pad_doc_id, pad_label=0
        )
        # one zero row appended so padded ids gather zero features
        self._gather = np.vstack(
            [corpus.features, np.zeros((1, corpus.feature_size))]
        )
        self._gather.flags.writeable = False

    def _assemble(
        self,
        query_ids: list[str],
        rows_doc_ids: list[np.ndarray],
        rows_labels: list[np.ndarray],
        rows_grades: list[np.ndarray],
        served_scores: list[np.ndarray] | None = None,
    ) -> InputFeedBatch:
        n = len(query_ids)
        doc_ids = np.full((n, self.list_size), self.policy.pad_doc_id, dtype=np.int64)
        labels = np.zeros((n, self.list_size), dtype=np.float64)
        grades = np.zeros((n, self.list_size), dtype=np.int64)
        mask = np.zeros((n, self.list_size), dtype=bool)
        scores = None if served_scores is None else np.zeros((n, self.list_size))
        for i in range(n):
            k = len(rows_doc_ids[i])
            if k > self.list_size:
                raise ValueError(f"row {i} longer than list_size {self.list_size}")
            doc_ids[i, :k] = rows_doc_ids[i]
            labels[i, :k] = rows_labels[i]
            grades[i, :k] = rows_grades[i]
            mask[i, :k] = True
            if scores is not None:
                scores[i, :k] = served_scores[i]
        features = self._gather[doc_ids]
        return InputFeedBatch(
            query_ids=query_ids,
            features=features,
            doc_ids=doc_ids,
            labels=labels,
            mask=mask,
            grades=grades,
            served_list=doc_ids.copy() if self.is_online else None,
            served_scores=scores,
        )

    def _sample_sessions(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(len(self.corpus.sessions), size=batch_size)
        return [self.corpus.sessions[i] for i in idx]


class DirectLabelFeed(_FeedBase):
    """Relevance grades in logged order; supports sequential epochs."""

    def __init__(self, corpus: Corpus, list_size: int = 0):
        super().__init__(corpus, list_size)

    def get_batch(self, batch_size: int, rng: np.random.Generator, **_) -> InputFeedBatch:
        sessions = self._sample_sessions(batch_size, rng)
        return self._batch_from(sessions)

    def sequential_batches(self, batch_size: int):
        """Yield batches covering every query exactly once, in order."""
        sessions = self.corpus.sessions
        for start in range(0, len(sessions), batch_size):
            yield self._batch_from(list(sessions[start : start + batch_size]))

    def _batch_from(self, sessions: list[QuerySession]) -> InputFeedBatch:
        return self._assemble(
            [s.query_id for s in sessions],
            [s.doc_ids for s in sessions],
            [s.labels.astype(np.float64) for s in sessions],
            [s.labels for s in sessions],
        )


class _ClickFeedBase(_FeedBase):
    """Click-driven feeds: selection-bias cutoff plus a click model."""

    def __init__(
        self,
        corpus: Corpus,
        click_spec: ClickModelSpec,
        cutoff: int,
        oracle_mode: bool = False,
        dynamic_bias_eta_change: float = 0.0,
        dynamic_bias_step_interval: int = 0,
    ):
        if cutoff < 0:
            raise ValueError("cutoff must be >= 0")
        max_len = max(len(s) for s in corpus.sessions)
        self.cutoff = cutoff if cutoff > 0 else max_len
        super().__init__(corpus, min(self.cutoff, max_len))
        self.click_spec = click_spec
        self.oracle_mode = oracle_mode
        self.dynamic_bias_eta_change = dynamic_bias_eta_change
        self.dynamic_bias_step_interval = dynamic_bias_step_interval

    def spec_at(self, step: int) -> ClickModelSpec:
        eta = dynamic_eta(
            self.click_spec.eta,
            step,
            self.dynamic_bias_eta_change,
            self.dynamic_bias_step_interval,
        )
        if eta == self.click_spec.eta:
            return self.click_spec
        return self.click_spec.with_eta(eta)


class ClickSimulationFeed(_ClickFeedBase):
    """Clicks on the logged order: the offline counterfactual setting."""

    def get_batch(
        self,
        batch_size: int,
        rng: np.random.Generator,
        step: int = 0,
        click_rng: np.random.Generator | None = None,
        **_,
    ) -> InputFeedBatch:
        click_rng = rng if click_rng is None else click_rng
        spec = self.spec_at(step)
        sessions = [
            apply_cutoff(s, self.cutoff) for s in self._sample_sessions(batch_size, rng)
        ]
        labels = []
        for s in sessions:
            if self.oracle_mode:
                labels.append(s.labels.astype(np.float64))
            else:
                labels.append(
                    simulate(spec, s.labels, click_rng).clicks.astype(np.float64)
                )
        return self._assemble(
            [s.query_id for s in sessions],
            [s.doc_ids for s in sessions],
            labels,
            [s.labels for s in sessions],
        )


class _OnlineFeedBase(_ClickFeedBase):
    is_online = True

    def get_batch(
        self,
        batch_size: int,
        rng: np.random.Generator,
        scorer_snapshot: tuple[scorers.ScorerSpec, scorers.ScorerParams] | None = None,
        step: int = 0,
        click_rng: np.random.Generator | None = None,
        **_,
    ) -> InputFeedBatch:
        if scorer_snapshot is None:
            raise ValueError("online feeds need a scorer snapshot for every batch")
        click_rng = rng if click_rng is None else click_rng
        scorer_spec, params = scorer_snapshot
        spec = self.spec_at(step)
        sessions = self._sample_sessions(batch_size, rng)
        query_ids, row_ids, row_labels, row_grades, row_scores = [], [], [], [], []
        for session in sessions:
            feats = self.corpus.features[session.doc_ids]
            scores = scorers.forward(params, scorer_spec, feats)
            order = self._serve_order(scores, rng)[: self.cutoff]
            grades = session.labels[order]
            if self.oracle_mode:
                labels = grades.astype(np.float64)
            else:
                labels = simulate(spec, grades, click_rng).clicks.astype(np.float64)
            query_ids.append(session.query_id)
            row_ids.append(session.doc_ids[order])
            row_labels.append(labels)
            row_grades.append(grades)
            row_scores.append(scores[order])
        return self._assemble(query_ids, row_ids, row_labels, row_grades, row_scores)

    def _serve_order(self, scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class DeterministicOnlineFeed(_OnlineFeedBase):
    """Serve by sorting on current scores (stable ties keep logged order)."""

    def _serve_order(self, scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rank_by_scores(scores)


class StochasticOnlineFeed(_OnlineFeedBase):
    """Serve a Plackett-Luce sample over current scores."""

    def _serve_order(self, scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return sample_plackett_luce(scores, rng)


def make_feed(
    name: str,
    corpus: Corpus,
    click_spec: ClickModelSpec | None = None,
    cutoff: int = 0,
    list_size: int = 0,
    oracle_mode: bool = False,
    dynamic_bias_eta_change: float = 0.0,
    dynamic_bias_step_interval: int = 0,
):
    if name == "direct_label":
        return DirectLabelFeed(corpus, list_size=list_size)
    if name not in FEED_NAMES:
        raise ValueError(f"unknown input feed {name!r}, expected one of {FEED_NAMES}")
    if click_spec is None:
        raise ValueError(f"feed {name!r} needs a click model")
    cls = {
        "click_simulation": ClickSimulationFeed,
        "deterministic_online": DeterministicOnlineFeed,
        "stochastic_online": StochasticOnlineFeed,
    }[name]
    return cls(
        corpus,
        click_spec,
        cutoff,
        oracle_mode=oracle_mode,
        dynamic_bias_eta_change=dynamic_bias_eta_change,
        dynamic_bias_step_interval=dynamic_bias_step_interval,
    )
