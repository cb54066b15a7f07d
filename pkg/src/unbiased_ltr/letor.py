"""LETOR / SVMlight ranking data: parsing, cutoff and padding.

Input files are line oriented, one document per line::

    <grade> qid:<id> <fidx>:<fval> ... [# comment]

Feature indices are 1-based and may be sparse; absent features default
to 0.0.  Negative relevance grades are clamped to 0 at ingestion.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class LetorParseError(ValueError):
    """Raised for malformed LETOR input, with the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class Document:
    """A single (query, document) pair: feature vector plus relevance grade."""

    features: np.ndarray
    relevance_grade: int


@dataclass(frozen=True)
class QuerySession:
    """One query's logged result list: document indices and their grades."""

    query_id: str
    doc_ids: np.ndarray  # indices into Corpus.features, logged order
    labels: np.ndarray  # integer relevance grades aligned with doc_ids

    def __post_init__(self):
        if len(self.doc_ids) != len(self.labels):
            raise ValueError("doc_ids and labels must have the same length")
        self.doc_ids.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.doc_ids)


@dataclass(frozen=True)
class Corpus:
    """An immutable in-memory ranking corpus.

    Features are stored once per (query, document) pair in a flat
    ``(n_docs, feature_size)`` matrix; sessions index into it.
    """

    sessions: tuple[QuerySession, ...]
    features: np.ndarray  # (n_docs, feature_size)
    grades: np.ndarray  # (n_docs,) clamped relevance grades
    feature_size: int
    g_max: int
    split_name: str = "train"

    def __post_init__(self):
        self.features.flags.writeable = False
        self.grades.flags.writeable = False

    @property
    def n_docs(self) -> int:
        return self.features.shape[0]

    @property
    def pad_doc_id(self) -> int:
        """Padding sentinel: one past the last valid document index."""
        return self.n_docs

    def document(self, doc_id: int) -> Document:
        return Document(self.features[doc_id], int(self.grades[doc_id]))

    def __len__(self) -> int:
        return len(self.sessions)


@dataclass(frozen=True)
class PaddingPolicy:
    """How to right-pad variable-length rank lists to a fixed length."""

    list_size: int
    pad_doc_id: int
    pad_label: int = 0

    def __post_init__(self):
        if self.list_size < 1:
            raise ValueError("list_size must be positive")


def parse_letor(
    lines: Iterable[str],
    split_name: str = "train",
    g_max_override: int | None = None,
) -> Corpus:
    """Parse LETOR text into a Corpus.

    Documents are grouped by qid in file order.  feature_size is the
    maximum feature index seen anywhere in the input.

    Raises:
        LetorParseError: on a malformed line (with its line number) or
            empty input.
    """
    qid_order: list[str] = []
    docs_by_qid: dict[str, list[int]] = {}
    feature_maps: list[dict[int, float]] = []
    grades: list[int] = []
    feature_size = 0

    n_lines = 0
    for line_number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        n_lines += 1
        tokens = line.split()
        if len(tokens) < 2:
            raise LetorParseError("expected '<grade> qid:<id> ...'", line_number)
        try:
            grade_value = float(tokens[0])
        except ValueError:
            raise LetorParseError(f"non-numeric grade {tokens[0]!r}", line_number) from None
        if grade_value != int(grade_value):
            raise LetorParseError(f"non-integer grade {tokens[0]!r}", line_number)
        if not tokens[1].startswith("qid:"):
            raise LetorParseError("missing qid field", line_number)
        qid = tokens[1][len("qid:"):]
        if not qid:
            raise LetorParseError("empty qid", line_number)

        feats: dict[int, float] = {}
        for token in tokens[2:]:
            idx_str, sep, val_str = token.partition(":")
            if not sep:
                raise LetorParseError(f"malformed feature token {token!r}", line_number)
            try:
                idx = int(idx_str)
                val = float(val_str)
            except ValueError:
                raise LetorParseError(f"malformed feature token {token!r}", line_number) from None
            if idx < 1:
                raise LetorParseError(f"feature index must be >= 1, got {idx}", line_number)
            feats[idx] = val
            feature_size = max(feature_size, idx)

        doc_id = len(feature_maps)
        feature_maps.append(feats)
        grades.append(max(0, int(grade_value)))
        if qid not in docs_by_qid:
            qid_order.append(qid)
            docs_by_qid[qid] = []
        docs_by_qid[qid].append(doc_id)

    if n_lines == 0:
        raise LetorParseError("empty input")

    features = np.zeros((len(feature_maps), feature_size), dtype=np.float64)
    for doc_id, feats in enumerate(feature_maps):
        for idx, val in feats.items():
            features[doc_id, idx - 1] = val
    grades_arr = np.asarray(grades, dtype=np.int64)

    sessions = tuple(
        QuerySession(
            query_id=qid,
            doc_ids=np.asarray(docs_by_qid[qid], dtype=np.int64),
            labels=grades_arr[docs_by_qid[qid]].copy(),
        )
        for qid in qid_order
    )
    g_max = int(grades_arr.max()) if g_max_override is None else int(g_max_override)
    return Corpus(
        sessions=sessions,
        features=features,
        grades=grades_arr,
        feature_size=feature_size,
        g_max=g_max,
        split_name=split_name,
    )


def corpus_to_letor(corpus: Corpus) -> str:
    """Serialize a Corpus back to LETOR text.

    Float features are written with ``repr`` so that reparsing recovers
    the exact same values; exact zeros are omitted (sparse convention).
    """
    out: list[str] = []
    for session in corpus.sessions:
        for doc_id, grade in zip(session.doc_ids, session.labels):
            parts = [str(int(grade)), f"qid:{session.query_id}"]
            row = corpus.features[doc_id]
            for j in np.nonzero(row)[0]:
                parts.append(f"{j + 1}:{float(row[j])!r}")
            out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def apply_cutoff(session: QuerySession, cutoff: int) -> QuerySession:
    """Return the top-``cutoff`` prefix of a session in logged order.

    cutoff 0 means no limit.  The input session is left unmodified.
    """
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    if cutoff == 0 or cutoff >= len(session):
        return session
    return QuerySession(
        query_id=session.query_id,
        doc_ids=session.doc_ids[:cutoff].copy(),
        labels=session.labels[:cutoff].copy(),
    )


def pad_batch(
    rows: Sequence[tuple[Sequence[int], Sequence[float]]],
    policy: PaddingPolicy,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad (doc_ids, labels) rows to ``policy.list_size``.

    Returns (doc_ids, labels, mask) arrays of shape (n_rows, list_size);
    mask is True at real entries and False at padded slots.

    Raises:
        ValueError: if any row is longer than list_size.
    """
    n = len(rows)
    doc_ids = np.full((n, policy.list_size), policy.pad_doc_id, dtype=np.int64)
    labels = np.full((n, policy.list_size), policy.pad_label, dtype=np.float64)
    mask = np.zeros((n, policy.list_size), dtype=bool)
    for i, (ids, labs) in enumerate(rows):
        if len(ids) != len(labs):
            raise ValueError(f"row {i}: doc_ids and labels lengths differ")
        if len(ids) > policy.list_size:
            raise ValueError(
                f"row {i}: length {len(ids)} exceeds list_size {policy.list_size}"
            )
        k = len(ids)
        doc_ids[i, :k] = np.asarray(ids, dtype=np.int64)
        labels[i, :k] = np.asarray(labs, dtype=np.float64)
        mask[i, :k] = True
    return doc_ids, labels, mask


def read_split(
    data_dir: str | os.PathLike,
    prefix: str,
    split_name: str | None = None,
    max_list_cutoff: int = 0,
    g_max_override: int | None = None,
) -> Corpus:
    """Read one split from ``<data_dir>/<prefix>.txt``.

    ``max_list_cutoff`` > 0 truncates every session to its top documents
    at parse time.
    """
    path = os.path.join(os.fspath(data_dir), f"{prefix}.txt")
    with open(path, "r", encoding="utf-8") as handle:
        corpus = parse_letor(
            handle,
            split_name=split_name if split_name is not None else prefix,
            g_max_override=g_max_override,
        )
    if max_list_cutoff > 0:
        sessions = tuple(apply_cutoff(s, max_list_cutoff) for s in corpus.sessions)
        corpus = Corpus(
            sessions=sessions,
            features=corpus.features,
            grades=corpus.grades,
            feature_size=corpus.feature_size,
            g_max=corpus.g_max,
            split_name=corpus.split_name,
        )
    return corpus
