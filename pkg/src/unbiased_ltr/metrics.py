"""Ranking metrics over scored, graded document lists.

All metrics are padding-aware: entries with mask False are dropped
before evaluation.  Queries with no relevant document evaluate to 0
rather than NaN so that averages stay defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("mrr", "err", "arp", "dcg", "ndcg", "precision", "map", "opa")

#: Metrics defined over the full list; the cutoff argument is ignored.
FULL_LIST_METRICS = ("arp", "map", "opa")


@dataclass(frozen=True)
class RankedResult:
    """Model scores and true grades for one query's documents."""

    scores: np.ndarray
    grades: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        if len(self.scores) != len(self.grades):
            raise ValueError("scores and grades must have the same length")
        if self.mask is not None and len(self.mask) != len(self.scores):
            raise ValueError("mask length mismatch")

    def valid(self) -> tuple[np.ndarray, np.ndarray]:
        if self.mask is None:
            return np.asarray(self.scores, dtype=np.float64), np.asarray(self.grades)
        m = np.asarray(self.mask, dtype=bool)
        return (
            np.asarray(self.scores, dtype=np.float64)[m],
            np.asarray(self.grades)[m],
        )


def sort_by_score(result: RankedResult) -> np.ndarray:
    """Indices of valid documents in descending score order.

    Ties are broken stably by original position; padded slots never
    appear in the output.
    """
    scores, _ = result.valid()
    order = np.argsort(-scores, kind="stable")
    if result.mask is None:
        return order
    valid_idx = np.flatnonzero(np.asarray(result.mask, dtype=bool))
    return valid_idx[order]


def _grades_in_rank_order(result: RankedResult) -> np.ndarray:
    scores, grades = result.valid()
    order = np.argsort(-scores, kind="stable")
    return np.asarray(grades, dtype=np.int64)[order]


def _mrr(ranked_grades: np.ndarray, k: int) -> float:
    top = ranked_grades[:k]
    hits = np.flatnonzero(top > 0)
    if hits.size == 0:
        return 0.0
    return 1.0 / (hits[0] + 1.0)


def _err(ranked_grades: np.ndarray, k: int, g_max: int) -> float:
    top = ranked_grades[:k]
    stop_probs = (np.exp2(top.astype(np.float64)) - 1.0) / (2.0**g_max)
    err = 0.0
    not_stopped = 1.0
    for r, p in enumerate(stop_probs, start=1):
        err += not_stopped * p / r
        not_stopped *= 1.0 - p
    return err


def _arp(ranked_grades: np.ndarray) -> float:
    relevant = np.flatnonzero(ranked_grades > 0)
    if relevant.size == 0:
        return 0.0
    return float(np.mean(relevant + 1.0))


def _dcg(ranked_grades: np.ndarray, k: int) -> float:
    top = ranked_grades[:k].astype(np.float64)
    ranks = np.arange(1, len(top) + 1, dtype=np.float64)
    return float(np.sum((np.exp2(top) - 1.0) / np.log2(ranks + 1.0)))


def _ndcg(ranked_grades: np.ndarray, k: int) -> float:
    ideal = np.sort(ranked_grades)[::-1]
    ideal_dcg = _dcg(ideal, k)
    if ideal_dcg == 0.0:
        return 0.0
    return _dcg(ranked_grades, k) / ideal_dcg


def _precision(ranked_grades: np.ndarray, k: int) -> float:
    top = ranked_grades[: min(k, len(ranked_grades))]
    if len(top) == 0:
        return 0.0
    return float(np.count_nonzero(top > 0)) / len(top)


def _map(ranked_grades: np.ndarray) -> float:
    relevant = ranked_grades > 0
    n_relevant = int(np.count_nonzero(relevant))
    if n_relevant == 0:
        return 0.0
    hits = np.cumsum(relevant)
    ranks = np.arange(1, len(ranked_grades) + 1)
    precision_at_hit = hits[relevant] / ranks[relevant]
    return float(np.sum(precision_at_hit)) / n_relevant


def _opa(scores: np.ndarray, grades: np.ndarray) -> float:
    diff_grade = grades[:, None] > grades[None, :]
    n_pairs = int(np.count_nonzero(diff_grade))
    if n_pairs == 0:
        return 0.0
    correct = diff_grade & (scores[:, None] > scores[None, :])
    return float(np.count_nonzero(correct)) / n_pairs


def evaluate(result: RankedResult, metric: str, k: int, g_max: int | None = None) -> float:
    """Evaluate one metric at cutoff ``k`` for a single query.

    ``g_max`` is required by err's stopping probabilities; it defaults
    to the maximum grade present in the list.
    """
    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRIC_NAMES}")
    if k < 1:
        raise ValueError("cutoff k must be >= 1")
    scores, grades = result.valid()
    if len(scores) == 0:
        return 0.0
    ranked = _grades_in_rank_order(result)
    if metric == "mrr":
        return _mrr(ranked, k)
    if metric == "err":
        if g_max is None:
            g_max = int(max(1, ranked.max()))
        return _err(ranked, k, g_max)
    if metric == "arp":
        return _arp(ranked)
    if metric == "dcg":
        return _dcg(ranked, k)
    if metric == "ndcg":
        return _ndcg(ranked, k)
    if metric == "precision":
        return _precision(ranked, k)
    if metric == "map":
        return _map(ranked)
    return _opa(scores, np.asarray(grades, dtype=np.int64))


@dataclass
class MetricReport:
    """Per-cutoff metric values, averaged over a set of queries."""

    values: dict[str, float] = field(default_factory=dict)

    @staticmethod
    def key(metric: str, k: int) -> str:
        return metric if metric in FULL_LIST_METRICS else f"{metric}_{k}"


def evaluate_all(
    results: list[RankedResult],
    metric_names: list[str],
    cutoffs: list[int],
    g_max: int | None = None,
) -> MetricReport:
    """Mean of each metric/cutoff pair over a list of query results.

    Full-list metrics (arp, map, opa) appear once without a cutoff
    suffix; the rest appear as ``<metric>_<k>``.
    """
    report = MetricReport()
    if not results:
        return report
    for metric in metric_names:
        ks = [cutoffs[0]] if metric in FULL_LIST_METRICS else cutoffs
        for k in ks:
            vals = [evaluate(r, metric, k, g_max=g_max) for r in results]
            report.values[MetricReport.key(metric, k)] = float(np.mean(vals))
    return report
