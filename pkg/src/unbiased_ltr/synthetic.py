"""Synthetic ranking corpora with a known linear ground truth.

Each query gets Gaussian document features; true utility is a fixed
linear function of the features and grades are assigned by per-query
utility quantile, so a perfect linear scorer exists by construction.
The logged document order comes from a noise-corrupted copy of the true
weights: a plausible production ranker that is informative but wrong,
which is what makes position-biased clicks genuinely misleading for
naive training.
"""

from __future__ import annotations

import numpy as np

from .letor import Corpus, QuerySession


def linear_truth_corpus(
    n_queries: int,
    docs_per_query: int,
    feature_size: int,
    rng: np.random.Generator,
    grade_levels: int = 5,
    logger_noise: float = 1.0,
    split_name: str = "train",
    true_weights: np.ndarray | None = None,
    logger_weights: np.ndarray | None = None,
) -> Corpus:
    """Build one split; pass shared weight vectors to keep splits consistent."""
    if true_weights is None:
        true_weights = sample_true_weights(feature_size, rng)
    if logger_weights is None:
        logger_weights = sample_logger_weights(true_weights, logger_noise, rng)

    features = np.zeros((n_queries * docs_per_query, feature_size))
    grades = np.zeros(n_queries * docs_per_query, dtype=np.int64)
    sessions = []
    position_grade = grade_levels - 1 - (
        np.arange(docs_per_query) * grade_levels // docs_per_query
    )
    for q in range(n_queries):
        x = rng.standard_normal((docs_per_query, feature_size))
        utility = x @ true_weights
        # quantile binning: equally many docs per grade, top utility = top grade
        doc_grades = np.zeros(docs_per_query, dtype=np.int64)
        doc_grades[np.argsort(-utility, kind="stable")] = position_grade
        # flat storage follows the logged order, matching parsed corpora
        logged = np.argsort(-(x @ logger_weights), kind="stable")
        lo = q * docs_per_query
        doc_ids = np.arange(lo, lo + docs_per_query, dtype=np.int64)
        features[doc_ids] = x[logged]
        grades[doc_ids] = doc_grades[logged]
        sessions.append(
            QuerySession(
                query_id=f"{split_name}-{q}",
                doc_ids=doc_ids,
                labels=grades[doc_ids].copy(),
            )
        )
    return Corpus(
        sessions=tuple(sessions),
        features=features,
        grades=grades,
        feature_size=feature_size,
        g_max=grade_levels - 1,
        split_name=split_name,
    )


def sample_true_weights(feature_size: int, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(feature_size)
    return w / np.linalg.norm(w)


def sample_logger_weights(
    true_weights: np.ndarray, logger_noise: float, rng: np.random.Generator
) -> np.ndarray:
    noise = rng.standard_normal(true_weights.shape[0])
    w = true_weights + logger_noise * noise / np.linalg.norm(noise)
    return w / np.linalg.norm(w)


def linear_truth_splits(
    n_train: int,
    n_valid: int,
    n_test: int,
    docs_per_query: int,
    feature_size: int,
    seed: int,
    grade_levels: int = 5,
    logger_noise: float = 1.0,
) -> tuple[Corpus, Corpus, Corpus]:
    """Three splits sharing the same true and logging weight vectors."""
    rng = np.random.default_rng(seed)
    w_true = sample_true_weights(feature_size, rng)
    w_log = sample_logger_weights(w_true, logger_noise, rng)

    def split(n: int, name: str) -> Corpus:
        return linear_truth_corpus(
            n,
            docs_per_query,
            feature_size,
            rng,
            grade_levels=grade_levels,
            split_name=name,
            true_weights=w_true,
            logger_weights=w_log,
        )

    return split(n_train, "train"), split(n_valid, "valid"), split(n_test, "test")
