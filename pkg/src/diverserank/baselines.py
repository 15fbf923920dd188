"""Reference rankers: relevance-only sort and maximal marginal relevance."""

import numpy as np

from . import metrics
from .types import DegenerateQueryError, MeasureParams, QueryInstance

DEFAULT_LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def relevance_scores(q: QueryInstance, channel=None) -> np.ndarray:
    """Stand-in retrieval score: one relevance feature or their mean."""
    if channel is None:
        return q.relevance_matrix.mean(axis=1)
    return q.relevance_matrix[:, channel].copy()


def relevance_rank(scores, k: int) -> list:
    """Sort descending by score, ties to the lower index, truncated to k."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def similarity_from_channel(q: QueryInstance, channel: int) -> np.ndarray:
    """Similarity matrix derived from one dissimilarity channel (1 - value)."""
    sim = 1.0 - q.pairwise[:, :, channel]
    np.fill_diagonal(sim, 1.0)
    return sim


def mmr_rank_scored(scores, sim, lam: float, k: int):
    """Greedy marginal-relevance selection; returns (ranking, marginal values).

    Each round appends the argmax of lam * score(d) minus
    (1 - lam) * max similarity to the already-selected documents; the
    penalty is zero on the first pick. Ties go to the lowest index.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    scores = np.asarray(scores, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    n = scores.shape[0]
    selected = []
    picked = []
    available = np.ones(n, dtype=bool)
    max_sim = np.zeros(n)
    for _ in range(min(k, n)):
        gains = lam * scores - (1.0 - lam) * (max_sim if selected else 0.0)
        gains[~available] = -np.inf
        doc = int(np.argmax(gains))
        selected.append(doc)
        picked.append(float(gains[doc]))
        available[doc] = False
        max_sim = np.maximum(max_sim, sim[doc])
    return selected, picked


def mmr_rank(scores, sim, lam: float, k: int) -> list:
    """Greedy marginal-relevance ranking (see mmr_rank_scored)."""
    return mmr_rank_scored(scores, sim, lam, k)[0]


def tune_mmr_lambda(
    queries,
    params: MeasureParams,
    grid=DEFAULT_LAMBDA_GRID,
    sim_channel: int = 0,
    score_channel=None,
) -> float:
    """Pick the grid lambda with the best mean normalized score on queries.

    Ties resolve to the smaller lambda so tuning stays deterministic.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty lambda grid")
    best_lam, best_score = None, -np.inf
    for lam in grid:
        scores = []
        for q in queries:
            ranking = mmr_rank(
                relevance_scores(q, score_channel),
                similarity_from_channel(q, sim_channel),
                lam,
                params.cutoff,
            )
            try:
                scores.append(metrics.dcem(ranking, q, params))
            except DegenerateQueryError:
                continue
        mean = float(np.mean(scores)) if scores else 0.0
        if mean > best_score:
            best_score, best_lam = mean, lam
    return float(best_lam)
