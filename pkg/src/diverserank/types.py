"""Shared domain types: documents, judgments, query instances, weights.

Documents are addressed by dense integer index inside a QueryInstance;
string doc_ids only matter at file boundaries. All arrays are float64 and
made read-only after construction so instances can be shared freely
across worker threads.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ALPHA_NDCG = "alpha-ndcg"
ERR_IA = "err-ia"
NRBP = "nrbp"
MEASURES = (ERR_IA, ALPHA_NDCG, NRBP)


class DegenerateQueryError(Exception):
    """No document is relevant to any subtopic; the query has no usable target."""


class InvalidRankingError(ValueError):
    """Ranking has duplicates, out-of-range indices, or exceeds the cutoff."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass
class DocumentRecord:
    """One candidate document with its per-document relevance features.

    The optional raw attributes (field term counts, category paths, link
    sets, url) only exist so the diversity features can be computed from
    them; they are not used anywhere else.
    """

    doc_id: str
    relevance_features: np.ndarray
    fields_text: Optional[dict] = None  # field name -> {term: count}
    categories: Optional[list] = None  # list of category paths (list of segments)
    inlinks: Optional[frozenset] = None
    outlinks: Optional[frozenset] = None
    url: Optional[str] = None

    def __post_init__(self):
        self.relevance_features = _freeze(np.asarray(self.relevance_features, dtype=np.float64))
        if self.inlinks is not None:
            self.inlinks = frozenset(self.inlinks)
        if self.outlinks is not None:
            self.outlinks = frozenset(self.outlinks)


@dataclass
class SubtopicJudgments:
    """Binary per-subtopic relevance with subtopic probabilities.

    rel is an M x n matrix over the query's documents; probs sums to 1.
    """

    probs: np.ndarray
    rel: np.ndarray

    def __post_init__(self):
        self.probs = _freeze(np.asarray(self.probs, dtype=np.float64))
        self.rel = _freeze(np.asarray(self.rel, dtype=np.float64))

    @property
    def num_subtopics(self) -> int:
        return self.rel.shape[0]

    @classmethod
    def uniform(cls, rel) -> "SubtopicJudgments":
        """Judgments with the uniform 1/M subtopic distribution."""
        rel = np.asarray(rel, dtype=np.float64)
        m = rel.shape[0]
        return cls(probs=np.full(m, 1.0 / m), rel=rel)


@dataclass
class QueryInstance:
    """One query: documents, pairwise diversity features, judgments.

    pairwise is a dense n x n x F tensor (symmetric, zero diagonal); the
    on-disk format is sparse but candidate sets are small enough that
    dense in-memory storage is the simpler choice.
    """

    query_id: str
    docs: list
    pairwise: np.ndarray
    judgments: SubtopicJudgments
    _relevance_matrix: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.docs = list(self.docs)
        self.pairwise = _freeze(np.asarray(self.pairwise, dtype=np.float64))
        self._relevance_matrix = _freeze(
            np.stack([d.relevance_features for d in self.docs])
            if self.docs
            else np.zeros((0, 0))
        )

    @property
    def num_docs(self) -> int:
        return len(self.docs)

    @property
    def num_relevance_features(self) -> int:
        return self._relevance_matrix.shape[1]

    @property
    def num_diversity_channels(self) -> int:
        return self.pairwise.shape[2]

    @property
    def relevance_matrix(self) -> np.ndarray:
        """n x R matrix of the documents' relevance feature vectors."""
        return self._relevance_matrix

    def doc_ids(self) -> list:
        return [d.doc_id for d in self.docs]


@dataclass(frozen=True)
class MeasureParams:
    """Which cascade measure to use and its parameters."""

    measure: str = ERR_IA
    alpha: float = 0.5
    beta: float = 0.5
    cutoff: int = 20

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}; expected one of {MEASURES}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")


@dataclass(frozen=True)
class WeightVector:
    """Learned linear weights, split into the relevance and diversity blocks."""

    w_rel: np.ndarray
    w_div: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_rel", _freeze(np.asarray(self.w_rel, dtype=np.float64)))
        object.__setattr__(self, "w_div", _freeze(np.asarray(self.w_div, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return self.w_rel.shape[0] + self.w_div.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w_rel, self.w_div])

    @classmethod
    def from_flat(cls, vec: np.ndarray, num_rel: int) -> "WeightVector":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(w_rel=vec[:num_rel], w_div=vec[num_rel:])

    @classmethod
    def zeros(cls, num_rel: int, num_div: int) -> "WeightVector":
        return cls(w_rel=np.zeros(num_rel), w_div=np.zeros(num_div))


@dataclass
class ValidationReport:
    """Outcome of validate_instance: a list of human-readable violations."""

    query_id: str
    problems: list

    @property
    def ok(self) -> bool:
        return not self.problems


def check_ranking(ranking, num_docs: int, cutoff: Optional[int] = None) -> list:
    """Validate a ranking against an instance; returns it as a plain list.

    Raises InvalidRankingError on duplicates, out-of-range indices or,
    when a cutoff is given, on rankings longer than the cutoff.
    """
    ranking = [int(d) for d in ranking]
    if cutoff is not None and len(ranking) > cutoff:
        raise InvalidRankingError(f"ranking length {len(ranking)} exceeds cutoff {cutoff}")
    seen = set()
    for doc in ranking:
        if doc < 0 or doc >= num_docs:
            raise InvalidRankingError(f"document index {doc} out of range [0, {num_docs})")
        if doc in seen:
            raise InvalidRankingError(f"duplicate document index {doc}")
        seen.add(doc)
    return ranking


def validate_instance(q: QueryInstance) -> ValidationReport:
    """Check every structural invariant of a QueryInstance.

    Side-effect free; all violations are collected into the report rather
    than raised.
    """
    problems = []
    n = q.num_docs

    lengths = {d.relevance_features.shape[0] for d in q.docs}
    if len(lengths) > 1:
        problems.append(f"relevance feature lengths differ across documents: {sorted(lengths)}")
    rels = q.relevance_matrix
    if rels.size and (rels.min() < 0.0 or rels.max() > 1.0):
        problems.append("relevance feature values outside [0, 1]")

    probs = q.judgments.probs
    if probs.ndim != 1 or probs.shape[0] != q.judgments.rel.shape[0]:
        problems.append("probs length does not match number of subtopics")
    if np.any(probs < 0):
        problems.append("negative subtopic probability")
    if abs(float(probs.sum()) - 1.0) > 1e-9:
        problems.append(f"probs not normalized (sum={probs.sum()!r})")
    rel = q.judgments.rel
    if rel.ndim != 2 or rel.shape[1] != n:
        problems.append(f"rel matrix shape {rel.shape} does not match document count {n}")
    elif not np.all(np.isin(rel, (0.0, 1.0))):
        problems.append("rel entries outside {0, 1}")

    pw = q.pairwise
    if pw.ndim != 3 or pw.shape[0] != n or pw.shape[1] != n:
        problems.append(f"pairwise tensor shape {pw.shape} does not match document count {n}")
    else:
        if not np.array_equal(pw, np.swapaxes(pw, 0, 1)):
            problems.append("asymmetric pairwise tensor")
        if n and np.any(pw[np.arange(n), np.arange(n), :] != 0.0):
            problems.append("nonzero pairwise diagonal")
        if pw.size and (pw.min() < 0.0 or pw.max() > 1.0):
            problems.append("pairwise values outside [0, 1]")

    return ValidationReport(query_id=q.query_id, problems=problems)
