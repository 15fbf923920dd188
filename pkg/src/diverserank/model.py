"""Joint feature map, linear discriminant, and the two greedy inferences.

The joint representation of (instance, ranking) is set-based: the sum of
the selected documents' relevance features concatenated with the sum of
the selected unordered pairs' diversity features. Position discounts
live in the loss, not here.
"""

from dataclasses import dataclass

import numpy as np

from .metrics import CascadeState
from .types import (
    DegenerateQueryError,
    MeasureParams,
    QueryInstance,
    WeightVector,
    check_ranking,
)


@dataclass(frozen=True)
class JointFeature:
    """Summed relevance block and summed pairwise diversity block."""

    phi_rel: np.ndarray
    phi_div: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.phi_rel, self.phi_div])


def joint_feature_map(q: QueryInstance, ranking) -> JointFeature:
    """Sum relevance vectors over ranked docs and pair vectors over ranked pairs."""
    ranking = check_ranking(ranking, q.num_docs)
    phi_rel = np.zeros(q.num_relevance_features)
    phi_div = np.zeros(q.num_diversity_channels)
    for idx, doc in enumerate(ranking):
        phi_rel += q.relevance_matrix[doc]
        for prev in ranking[:idx]:
            phi_div += q.pairwise[prev, doc]
    return JointFeature(phi_rel=phi_rel, phi_div=phi_div)


def discriminant(w: WeightVector, q: QueryInstance, ranking) -> float:
    """Linear score of a ranking: w_rel . phi_rel + w_div . phi_div."""
    if w.w_rel.shape[0] != q.num_relevance_features:
        raise ValueError(
            f"weight relevance block has {w.w_rel.shape[0]} entries, "
            f"instance has {q.num_relevance_features} features"
        )
    if w.w_div.shape[0] != q.num_diversity_channels:
        raise ValueError(
            f"weight diversity block has {w.w_div.shape[0]} entries, "
            f"instance has {q.num_diversity_channels} channels"
        )
    phi = joint_feature_map(q, ranking)
    return float(w.w_rel @ phi.phi_rel + w.w_div @ phi.phi_div)


def _pair_scores(w: WeightVector, q: QueryInstance) -> np.ndarray:
    """n x n matrix of w_div-weighted pairwise features."""
    return q.pairwise @ w.w_div


def predict_scored(w: WeightVector, q: QueryInstance, k: int):
    """Greedy argmax of the discriminant; returns (ranking, marginal gains).

    The marginal gain of a candidate is its weighted relevance score plus
    the weighted pair scores against everything already selected; ties go
    to the lowest index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = q.num_docs
    rel_scores = q.relevance_matrix @ w.w_rel
    pair = _pair_scores(w, q)
    div_acc = np.zeros(n)
    selected = []
    picked_gains = []
    available = np.ones(n, dtype=bool)
    for _ in range(min(k, n)):
        gains = rel_scores + div_acc
        gains[~available] = -np.inf
        doc = int(np.argmax(gains))
        selected.append(doc)
        picked_gains.append(float(gains[doc]))
        available[doc] = False
        div_acc = div_acc + pair[doc]
    return selected, picked_gains


def predict(w: WeightVector, q: QueryInstance, k: int) -> list:
    """Greedy discriminant ranking (see predict_scored)."""
    return predict_scored(w, q, k)[0]


def loss_augmented_infer(
    w: WeightVector,
    q: QueryInstance,
    target,
    params: MeasureParams,
    k: int,
    loss_weight: float = 1.0,
) -> list:
    """Greedy argmax of loss + discriminant (the most violated constraint).

    The loss term telescopes over appends: each candidate contributes
    minus its cascade marginal gain divided by the target's raw score
    (the constant 1 in the loss shifts every gain equally and never moves
    an argmax). loss_weight=0 is a diagnostic mode identical to predict.
    """
    target_state = CascadeState(q.judgments, params)
    for doc in target:
        target_state.append(doc)
    ideal_raw = target_state.score
    if loss_weight != 0.0 and ideal_raw <= 0.0:
        raise DegenerateQueryError(f"query {q.query_id}: target has zero raw score")

    n = q.num_docs
    rel_scores = q.relevance_matrix @ w.w_rel
    pair = _pair_scores(w, q)
    div_acc = np.zeros(n)
    state = CascadeState(q.judgments, params)
    selected = []
    available = np.ones(n, dtype=bool)
    for _ in range(min(k, n)):
        gains = rel_scores + div_acc
        if loss_weight != 0.0:
            gains = gains - loss_weight * state.all_gains() / ideal_raw
        gains[~available] = -np.inf
        doc = int(np.argmax(gains))
        selected.append(doc)
        available[doc] = False
        div_acc = div_acc + pair[doc]
        state.append(doc)
    return selected
