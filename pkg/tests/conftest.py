"""Shared builders for random and hand-crafted query instances."""

import numpy as np
import pytest

from diverserank.types import DocumentRecord, QueryInstance, SubtopicJudgments


def random_instance(rng, n=6, num_subtopics=3, num_rel=3, num_div=2,
                    rel_density=0.45, ensure_relevant=True, query_id="q"):
    """Random valid instance; judgments are Bernoulli(rel_density)."""
    rel = (rng.random((num_subtopics, n)) < rel_density).astype(float)
    if ensure_relevant and not rel.any():
        rel[rng.integers(num_subtopics), rng.integers(n)] = 1.0
    probs = rng.random(num_subtopics) + 0.1
    probs /= probs.sum()
    feats = rng.random((n, num_rel))
    pairwise = rng.random((n, n, num_div))
    pairwise = np.triu(pairwise, 1)
    pairwise = pairwise + np.swapaxes(pairwise, 0, 1)
    for c in range(num_div):
        np.fill_diagonal(pairwise[:, :, c], 0.0)
    docs = [DocumentRecord(doc_id=f"{query_id}-d{i}", relevance_features=feats[i]) for i in range(n)]
    return QueryInstance(
        query_id=query_id,
        docs=docs,
        pairwise=pairwise,
        judgments=SubtopicJudgments(probs=probs, rel=rel),
    )


def instance_from_rel(rel, probs=None, feats=None, pairwise=None, query_id="toy"):
    """Instance with explicit judgments; features default to zeros."""
    rel = np.asarray(rel, dtype=float)
    m, n = rel.shape
    if probs is None:
        probs = np.full(m, 1.0 / m)
    if feats is None:
        feats = np.zeros((n, 1))
    feats = np.asarray(feats, dtype=float)
    if pairwise is None:
        pairwise = np.zeros((n, n, 1))
    docs = [DocumentRecord(doc_id=f"{query_id}-d{i}", relevance_features=feats[i]) for i in range(n)]
    return QueryInstance(
        query_id=query_id,
        docs=docs,
        pairwise=np.asarray(pairwise, dtype=float),
        judgments=SubtopicJudgments(probs=np.asarray(probs, dtype=float), rel=rel),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
