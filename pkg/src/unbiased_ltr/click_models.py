"""Synthetic click generation over ranked lists.

Three user models are supported, all built on the examination
hypothesis (a document is clicked iff it is examined and judged
relevant):

* ``pbm``     - position-based model: rank k is examined with
  probability (1/k)^eta, independently of other ranks.
* ``cascade`` - the user scans top-down, examines every document until
  the first click, then stops.
* ``ubm``     - user browsing model: examination depends on the
  distance to the previously clicked rank, (1/(k - k_last))^eta.

The probability that an examined document is clicked interpolates
between ``neg_click_prob`` and ``pos_click_prob`` with exponential gain
in the relevance grade, (2^g - 1) / (2^g_max - 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

CLICK_MODEL_NAMES = ("pbm", "cascade", "ubm")

_JSON_KEYS = (
    "model_name",
    "neg_click_prob",
    "pos_click_prob",
    "max_relevance_grade",
    "eta",
)


@dataclass(frozen=True)
class ClickModelSpec:
    """Parameters of a click model.

    eta is the position-bias severity exponent: 0 removes position bias
    entirely, larger values concentrate examination near the top.
    """

    model_name: str
    neg_click_prob: float
    pos_click_prob: float
    max_relevance_grade: int
    eta: float

    def __post_init__(self):
        if self.model_name not in CLICK_MODEL_NAMES:
            raise ValueError(
                f"unknown click model {self.model_name!r}, expected one of {CLICK_MODEL_NAMES}"
            )
        if not 0.0 <= self.neg_click_prob <= self.pos_click_prob <= 1.0:
            raise ValueError(
                "click probabilities must satisfy 0 <= neg_click_prob "
                f"<= pos_click_prob <= 1, got ({self.neg_click_prob}, {self.pos_click_prob})"
            )
        if self.max_relevance_grade < 0:
            raise ValueError("max_relevance_grade must be >= 0")
        if self.eta < 0.0:
            raise ValueError("eta must be >= 0")

    def with_eta(self, eta: float) -> "ClickModelSpec":
        return ClickModelSpec(
            self.model_name,
            self.neg_click_prob,
            self.pos_click_prob,
            self.max_relevance_grade,
            eta,
        )


@dataclass(frozen=True)
class ClickRecord:
    """Clicks for one displayed list plus the examination probabilities used.

    ``exam_probs[k]`` is the probability with which rank k was examined
    in the sampled trajectory (history-dependent for cascade and ubm).
    """

    clicks: np.ndarray  # int {0,1} per displayed rank
    exam_probs: np.ndarray  # float per displayed rank

    def __post_init__(self):
        self.clicks.flags.writeable = False
        self.exam_probs.flags.writeable = False


def click_prob_from_grade(grade: int, spec: ClickModelSpec) -> float:
    """Probability of clicking an examined document with this grade."""
    g_max = spec.max_relevance_grade
    if grade < 0 or grade > g_max:
        raise ValueError(f"grade {grade} outside [0, {g_max}]")
    if g_max == 0:
        return spec.pos_click_prob if grade > 0 else spec.neg_click_prob
    gain = (2.0**grade - 1.0) / (2.0**g_max - 1.0)
    return spec.neg_click_prob + (spec.pos_click_prob - spec.neg_click_prob) * gain


def pbm_exam_prob(rank: int, eta: float) -> float:
    """Position-based examination probability for a 1-based rank."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return (1.0 / rank) ** eta


def simulate(spec: ClickModelSpec, grades, rng: np.random.Generator) -> ClickRecord:
    """Sample one click vector for a displayed list of relevance grades.

    ``grades`` are aligned to displayed ranks (after any selection-bias
    cutoff, before padding).  Same spec, grades and generator state give
    bit-identical clicks.
    """
    grades = np.asarray(grades, dtype=np.int64)
    n = len(grades)
    clicks = np.zeros(n, dtype=np.int64)
    exam = np.zeros(n, dtype=np.float64)
    if n == 0:
        return ClickRecord(clicks, exam)
    rel = np.array([click_prob_from_grade(int(g), spec) for g in grades])

    if spec.model_name == "pbm":
        ranks = np.arange(1, n + 1, dtype=np.float64)
        exam = (1.0 / ranks) ** spec.eta
        clicks = (rng.random(n) < exam * rel).astype(np.int64)
    elif spec.model_name == "cascade":
        for k in range(n):
            exam[k] = 1.0
            if rng.random() < rel[k]:
                clicks[k] = 1
                break
    else:  # ubm
        last_click_rank = 0  # 0 = no click yet
        for k in range(n):
            rank = k + 1
            exam[k] = (1.0 / (rank - last_click_rank)) ** spec.eta
            if rng.random() < exam[k] and rng.random() < rel[k]:
                clicks[k] = 1
                last_click_rank = rank
    return ClickRecord(clicks, exam)


def simulate_pbm_batch(
    spec: ClickModelSpec, grades: np.ndarray, mask: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized position-based clicks for a (n_lists, list_size) grade batch.

    Statistically identical to calling :func:`simulate` per row; padded
    slots (mask False) never receive clicks.
    """
    if spec.model_name != "pbm":
        raise ValueError("batch simulation only supports the pbm model")
    n_lists, list_size = grades.shape
    ranks = np.arange(1, list_size + 1, dtype=np.float64)
    exam = (1.0 / ranks) ** spec.eta
    rel = relevance_click_probs(spec, grades)
    clicks = rng.random((n_lists, list_size)) < exam[None, :] * rel
    return (clicks & mask).astype(np.int64)


def relevance_click_probs(spec: ClickModelSpec, grades: np.ndarray) -> np.ndarray:
    g_max = spec.max_relevance_grade
    if np.any(grades > g_max) or np.any(grades < 0):
        raise ValueError(f"grades outside [0, {g_max}]")
    if g_max == 0:
        return np.where(grades > 0, spec.pos_click_prob, spec.neg_click_prob)
    gain = (np.exp2(grades.astype(np.float64)) - 1.0) / (2.0**g_max - 1.0)
    return spec.neg_click_prob + (spec.pos_click_prob - spec.neg_click_prob) * gain


def load_spec(json_text: str) -> ClickModelSpec:
    """Parse a click model JSON definition; unknown keys are rejected."""
    obj = json.loads(json_text)
    if not isinstance(obj, dict):
        raise ValueError("click model JSON must be an object")
    unknown = set(obj) - set(_JSON_KEYS)
    if unknown:
        raise ValueError(f"unknown click model keys: {sorted(unknown)}")
    missing = set(_JSON_KEYS) - set(obj)
    if missing:
        raise ValueError(f"missing click model keys: {sorted(missing)}")
    return ClickModelSpec(
        model_name=str(obj["model_name"]),
        neg_click_prob=float(obj["neg_click_prob"]),
        pos_click_prob=float(obj["pos_click_prob"]),
        max_relevance_grade=int(obj["max_relevance_grade"]),
        eta=float(obj["eta"]),
    )


def save_spec(spec: ClickModelSpec) -> str:
    """Serialize a spec to JSON with normalized key order."""
    obj = asdict(spec)
    return json.dumps({key: obj[key] for key in _JSON_KEYS}, indent=2) + "\n"


def spec_filename(spec: ClickModelSpec) -> str:
    """Canonical file name, e.g. ``pbm_0.1_1.0_4_1.0.json``."""
    return (
        f"{spec.model_name}_{float(spec.neg_click_prob)}_{float(spec.pos_click_prob)}"
        f"_{int(spec.max_relevance_grade)}_{float(spec.eta)}.json"
    )


def load_spec_file(path: str) -> ClickModelSpec:
    with open(path, "r", encoding="utf-8") as handle:
        return load_spec(handle.read())


def save_spec_file(spec: ClickModelSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(save_spec(spec))


def dynamic_eta(base_eta: float, step: int, eta_change: float, step_interval: int) -> float:
    """Bias severity at a training step under the dynamic-bias schedule.

    Every ``step_interval`` steps eta grows by ``eta_change``;
    an interval or change of 0 disables the schedule.  The result is
    floored at 0 to keep ClickModelSpec's eta >= 0 invariant.
    """
    if eta_change == 0.0 or step_interval <= 0:
        return base_eta
    return max(0.0, base_eta + eta_change * (step // step_interval))
