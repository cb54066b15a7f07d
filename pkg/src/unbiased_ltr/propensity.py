"""Examination propensity estimation for inverse propensity weighting.

Three estimators:

* oracle      - reads the examination curve straight off a position-based
  click model.
* basic       - all-ones table, i.e. no correction; doubles as the naive
  baseline.
* randomized  - estimates the curve from simulated result-randomization
  sessions: shuffling the displayed slate makes expected relevance equal
  at every rank, so per-rank click counts become proportional to
  examination probabilities.

Tables are normalized so rank 1 has propensity exactly 1; inverse
weights are clipped at ``MAX_INVERSE_WEIGHT`` to bound variance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .click_models import ClickModelSpec, pbm_exam_prob, simulate, relevance_click_probs
from .letor import Corpus, apply_cutoff

MAX_INVERSE_WEIGHT = 100.0


class PropensityEstimationError(RuntimeError):
    """Raised when randomization produced no rank-1 clicks to normalize by."""


@dataclass(frozen=True)
class PropensityTable:
    """Per-rank examination probabilities, rank-1-normalized."""

    exam_probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.exam_probs, dtype=np.float64)
        object.__setattr__(self, "exam_probs", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("exam_probs must be a non-empty vector")
        if np.any(probs <= 0.0) or np.any(probs > 1.0):
            raise ValueError("exam_probs entries must lie in (0, 1]")
        if abs(probs[0] - 1.0) > 1e-12:
            raise ValueError("exam_probs must be normalized to 1 at rank 1")
        probs.flags.writeable = False

    def __len__(self) -> int:
        return len(self.exam_probs)

    def inverse_weights(self) -> np.ndarray:
        """Clipped inverse propensities, the per-rank loss weights."""
        return np.minimum(1.0 / self.exam_probs, MAX_INVERSE_WEIGHT)


def normalized(raw: np.ndarray) -> PropensityTable:
    """Normalize a raw positive curve to rank-1 = 1 and validate it."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ValueError("expected a non-empty propensity vector")
    if raw[0] <= 0.0:
        raise ValueError("rank-1 propensity must be positive")
    return PropensityTable(raw / raw[0])


def basic_table(cutoff: int) -> PropensityTable:
    """The identity estimator: no position-bias correction."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    return PropensityTable(np.ones(cutoff))


def oracle_from_click_model(spec: ClickModelSpec, cutoff: int) -> PropensityTable:
    """Exact examination curve of a position-based click model."""
    if spec.model_name != "pbm":
        raise ValueError(
            f"oracle propensities need a static rank curve; {spec.model_name!r} has none"
        )
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    curve = np.array([pbm_exam_prob(rank, spec.eta) for rank in range(1, cutoff + 1)])
    return normalized(curve)


def estimate_randomized(
    corpus: Corpus,
    spec: ClickModelSpec,
    sessions: int,
    cutoff: int,
    rng: np.random.Generator,
) -> PropensityTable:
    """Estimate the examination curve from shuffled-slate click sessions.

    Each session samples a query uniformly, shuffles its top-``cutoff``
    slate, simulates clicks and accumulates per-rank click counts; the
    table is the count ratio to rank 1, clipped into (0, 1].

    Raises:
        PropensityEstimationError: if rank 1 never got a click.
    """
    if sessions < 1:
        raise ValueError("sessions must be >= 1")
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    counts = np.zeros(cutoff, dtype=np.float64)
    if spec.model_name == "pbm":
        _accumulate_pbm_randomized(corpus, spec, sessions, cutoff, rng, counts)
    else:
        for _ in range(sessions):
            session = corpus.sessions[rng.integers(len(corpus.sessions))]
            slate = apply_cutoff(session, cutoff)
            grades = slate.labels[rng.permutation(len(slate))]
            record = simulate(spec, grades, rng)
            counts[: len(grades)] += record.clicks
    if counts[0] <= 0.0:
        raise PropensityEstimationError(
            f"no clicks at rank 1 after {sessions} randomized sessions"
        )
    ratios = np.clip(counts / counts[0], 1e-12, 1.0)
    return PropensityTable(ratios)


def _accumulate_pbm_randomized(
    corpus: Corpus,
    spec: ClickModelSpec,
    sessions: int,
    cutoff: int,
    rng: np.random.Generator,
    counts: np.ndarray,
) -> None:
    """Vectorized randomized-session click counting for the pbm model.

    Sessions are grouped by query so each query's shuffles batch into a
    single argsort; statistically identical to the per-session loop.
    """
    exam = np.array([pbm_exam_prob(rank, spec.eta) for rank in range(1, cutoff + 1)])
    query_idx = rng.integers(len(corpus.sessions), size=sessions)
    session_counts = np.bincount(query_idx, minlength=len(corpus.sessions))
    for q, n_sessions in enumerate(session_counts):
        if n_sessions == 0:
            continue
        slate = apply_cutoff(corpus.sessions[q], cutoff)
        n = len(slate)
        perms = np.argsort(rng.random((n_sessions, n)), axis=1)
        grades = slate.labels[perms]  # (n_sessions, n)
        rel = relevance_click_probs(spec, grades)
        clicks = rng.random((n_sessions, n)) < exam[None, :n] * rel
        counts[:n] += clicks.sum(axis=0)


def table_to_json(table: PropensityTable) -> str:
    return json.dumps({"exam_probs": table.exam_probs.tolist()}, indent=2) + "\n"


def table_from_json(text: str) -> PropensityTable:
    """Load a table; the curve is rank-1-normalized before validation."""
    obj = json.loads(text)
    if not isinstance(obj, dict) or "exam_probs" not in obj:
        raise ValueError('propensity JSON must be an object with an "exam_probs" list')
    return normalized(np.asarray(obj["exam_probs"], dtype=np.float64))


def load_table(path: str) -> PropensityTable:
    with open(path, "r", encoding="utf-8") as handle:
        return table_from_json(handle.read())


def save_table(table: PropensityTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(table_to_json(table))
