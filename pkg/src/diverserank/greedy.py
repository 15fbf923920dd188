"""Greedy selection over a marginal-gain oracle, plus the exhaustive oracle.

Ties always break to the lowest candidate index so selection is a pure
function of its inputs. Zero-gain candidates are still appended until the
requested length: the construction runs a fixed number of rounds.
"""

from .metrics import CascadeState, position_discount
from .types import DegenerateQueryError, MeasureParams, QueryInstance

import numpy as np


def greedy_select(n: int, k: int, gain) -> list:
    """Pick min(k, n) candidates, each round appending an argmax of gain.

    gain(prefix, candidate) must be defined for every unselected
    candidate; prefix is the list selected so far (not to be mutated).
    """
    selected = []
    remaining = list(range(n))
    for _ in range(min(k, n)):
        best_doc = None
        best_gain = None
        for doc in remaining:
            g = gain(selected, doc)
            if best_gain is None or g > best_gain:
                best_gain = g
                best_doc = doc
        selected.append(best_doc)
        remaining.remove(best_doc)
    return selected


def build_target(q: QueryInstance, params: MeasureParams) -> list:
    """Training target: greedy selection on the true cascade marginal gains.

    The returned ranking is by construction the one whose raw score is
    the ideal normalizer. Raises DegenerateQueryError when no document is
    relevant to any subtopic (callers skip such queries).
    """
    if not np.any(q.judgments.rel):
        raise DegenerateQueryError(f"query {q.query_id}: no relevant documents")
    state = CascadeState(q.judgments, params)

    def gain(prefix, doc):
        # advance the shared cascade state lazily as the prefix grows
        while state.depth < len(prefix):
            state.append(prefix[state.depth])
        return state.marginal_gain(doc)

    return greedy_select(q.num_docs, params.cutoff, gain)


class InstanceTooLargeError(ValueError):
    """Guard against factorial blowup in the exhaustive search."""


def exhaustive_best(q: QueryInstance, params: MeasureParams, k: int):
    """Exact maximum of the raw cascade score over ordered k-tuples.

    Only usable on toy instances (n <= 10, k <= 5). Ties resolve to the
    lexicographically smallest tuple. Returns (ranking, raw_score).
    """
    n = q.num_docs
    k = min(k, n)
    if n > 10 or k > 5:
        raise InstanceTooLargeError(f"exhaustive search refused for n={n}, k={k}")

    probs = q.judgments.probs
    rel = q.judgments.rel
    alpha = params.alpha
    best = {"score": -1.0, "ranking": None}

    def descend(prefix, counts, score, depth):
        if depth == k:
            if score > best["score"]:
                best["score"] = score
                best["ranking"] = list(prefix)
            return
        discount = position_discount(params.measure, depth + 1, params.beta)
        weights = probs * (1.0 - alpha) ** counts
        for doc in range(n):
            if doc in prefix:
                continue
            gain = float(weights @ rel[:, doc]) / discount
            prefix.append(doc)
            descend(prefix, counts + rel[:, doc], score + gain, depth + 1)
            prefix.pop()

    descend([], np.zeros(rel.shape[0]), 0.0, 0)
    return best["ranking"], best["score"]
