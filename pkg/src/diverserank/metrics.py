"""Cascade diversity measures (err-ia, alpha-ndcg, nrbp) and companions.

All three measures share the gain g_i^k * (1 - alpha) ** c_i^k, where
c_i^k counts previously ranked documents relevant to subtopic i, and
differ only in the position discount:

    alpha-ndcg   log2(k + 1)
    err-ia       k
    nrbp         (1 / beta) ** (k - 1)

Scores are normalized by the raw score of the greedily built ideal
ranking; finding the true optimum is NP-hard, so the greedy ideal is the
normalizer by convention (and the reason normalized scores get clamped
to [0, 1]).
"""

import numpy as np

from .types import (
    ALPHA_NDCG,
    ERR_IA,
    NRBP,
    DegenerateQueryError,
    InvalidRankingError,
    MeasureParams,
    QueryInstance,
    SubtopicJudgments,
    check_ranking,
)


def position_discount(measure: str, k: int, beta: float) -> float:
    """Discount divisor for 1-based rank position k."""
    if measure == ALPHA_NDCG:
        return float(np.log2(k + 1))
    if measure == ERR_IA:
        return float(k)
    if measure == NRBP:
        return (1.0 / beta) ** (k - 1)
    raise ValueError(f"unknown measure {measure!r}")


class CascadeState:
    """Incremental cascade evaluation of one growing ranking.

    Keeps the per-subtopic coverage counts, the current depth and the
    accumulated raw score, so each marginal gain costs O(M) instead of a
    full re-evaluation.
    """

    def __init__(self, judgments: SubtopicJudgments, params: MeasureParams):
        self.judgments = judgments
        self.params = params
        self.counts = np.zeros(judgments.num_subtopics)
        self.depth = 0
        self.score = 0.0
        self._ranked = set()

    def gain_weights(self) -> np.ndarray:
        """Per-subtopic weight p_i * (1 - alpha) ** c_i at the current depth."""
        return self.judgments.probs * (1.0 - self.params.alpha) ** self.counts

    def all_gains(self) -> np.ndarray:
        """Marginal gain of appending each document (already-ranked ones included)."""
        discount = position_discount(self.params.measure, self.depth + 1, self.params.beta)
        return (self.gain_weights() @ self.judgments.rel) / discount

    def marginal_gain(self, doc: int) -> float:
        """Raw-score increase from appending doc at the next position."""
        if doc in self._ranked:
            raise InvalidRankingError(f"document {doc} already ranked")
        discount = position_discount(self.params.measure, self.depth + 1, self.params.beta)
        return float(self.gain_weights() @ self.judgments.rel[:, doc]) / discount

    def append(self, doc: int) -> float:
        """Append doc, returning its marginal gain."""
        gain = self.marginal_gain(doc)
        self.counts = self.counts + self.judgments.rel[:, doc]
        self.depth += 1
        self.score += gain
        self._ranked.add(doc)
        return gain


def marginal_gain(state: CascadeState, doc: int) -> float:
    """Module-level alias for CascadeState.marginal_gain."""
    return state.marginal_gain(doc)


def raw_dcem(ranking, judgments: SubtopicJudgments, params: MeasureParams) -> float:
    """Unnormalized cascade score of a ranking (no ideal normalizer)."""
    ranking = check_ranking(ranking, judgments.rel.shape[1], cutoff=params.cutoff)
    state = CascadeState(judgments, params)
    for doc in ranking:
        state.append(doc)
    return state.score


def ideal_ranking(q: QueryInstance, params: MeasureParams):
    """Greedy ideal ranking over the true judgments and its raw score.

    At every step the argmax-gain document is appended (ties to the
    lowest index); documents with zero gain still get appended until the
    cutoff, matching the fixed-length greedy construction.
    """
    n = q.num_docs
    state = CascadeState(q.judgments, params)
    selected = []
    available = np.ones(n, dtype=bool)
    for _ in range(min(params.cutoff, n)):
        gains = state.all_gains()
        gains[~available] = -np.inf
        doc = int(np.argmax(gains))
        state.append(doc)
        selected.append(doc)
        available[doc] = False
    return selected, state.score


def ideal_raw_dcem(q: QueryInstance, params: MeasureParams) -> float:
    """Raw score of the greedy ideal ranking; 0 iff nothing is relevant."""
    return ideal_ranking(q, params)[1]


def dcem(ranking, q: QueryInstance, params: MeasureParams) -> float:
    """Normalized cascade score in [0, 1]."""
    ideal = ideal_raw_dcem(q, params)
    if ideal <= 0.0:
        raise DegenerateQueryError(f"query {q.query_id}: no relevant documents")
    value = raw_dcem(ranking, q.judgments, params) / ideal
    return min(1.0, max(0.0, value))


def dcem_loss(ideal_score_raw: float, ranking, q: QueryInstance, params: MeasureParams) -> float:
    """Diversity loss 1 - raw(ranking) / raw(ideal), clamped to [0, 1]."""
    if ideal_score_raw <= 0.0:
        raise DegenerateQueryError(f"query {q.query_id}: zero ideal score")
    loss = 1.0 - raw_dcem(ranking, q.judgments, params) / ideal_score_raw
    return min(1.0, max(0.0, loss))


def precision_ia(ranking, q: QueryInstance, cutoff: int) -> float:
    """Precision averaged over subtopics at the given cutoff."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    ranking = check_ranking(ranking, q.num_docs)
    top = ranking[:cutoff]
    if not top:
        return 0.0
    rel = q.judgments.rel
    per_subtopic = rel[:, top].sum(axis=1) / cutoff
    return float(per_subtopic.mean())


def subtopic_recall(ranking, q: QueryInstance, cutoff: int) -> float:
    """Fraction of subtopics covered by at least one top-cutoff document."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    ranking = check_ranking(ranking, q.num_docs)
    top = ranking[:cutoff]
    if not top:
        return 0.0
    rel = q.judgments.rel
    covered = (rel[:, top].sum(axis=1) > 0).sum()
    return float(covered) / rel.shape[0]
