"""Synthetic diversification datasets with known ground truth.

Each document either belongs to one latent subtopic or is irrelevant.
Half of the relevance features carry the relevance signal, half are
noise; half of the diversity channels separate cross-subtopic pairs from
same-subtopic (and irrelevant) pairs, half are noise. The noise-free
base values are dyadic rationals so that gain sums stay exact in float64
and tied candidates are true ties; with the noise at zero and the signal
at full strength, the oracle weights then reproduce the greedy ideal
ranking exactly, making the construction separable by design.
"""

import math
from dataclasses import dataclass

import numpy as np

from .features import CHANNELS
from .types import DocumentRecord, QueryInstance, SubtopicJudgments, WeightVector

RELEVANT_BASE = 0.75
IRRELEVANT_BASE = 0.25


@dataclass(frozen=True)
class SynthConfig:
    num_queries: int = 100
    docs_per_query: int = 50
    num_subtopics: int = 4
    num_relevance_features: int = 8
    num_diversity_channels: int = 7
    relevance_noise: float = 0.2
    diversity_signal: float = 1.0
    redundancy: float = 0.5
    irrelevant_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.num_queries, self.docs_per_query, self.num_subtopics,
               self.num_relevance_features, self.num_diversity_channels) < 1:
            raise ValueError("all counts must be >= 1")


def channel_names(num_channels: int) -> list:
    if num_channels == len(CHANNELS):
        return list(CHANNELS)
    return [f"div{i}" for i in range(num_channels)]


def _informative_count(total: int) -> int:
    return math.ceil(total / 2)


def oracle_weights(config: SynthConfig) -> WeightVector:
    """Indicator weights on the informative channels; loss 0 at zero noise."""
    w_rel = np.zeros(config.num_relevance_features)
    w_rel[: _informative_count(config.num_relevance_features)] = 1.0
    w_div = np.zeros(config.num_diversity_channels)
    w_div[: _informative_count(config.num_diversity_channels)] = 1.0
    return WeightVector(w_rel=w_rel, w_div=w_div)


def _assign_subtopics(rng, config: SynthConfig) -> np.ndarray:
    """Latent subtopic per document, -1 for irrelevant.

    The redundancy rate is the chance that a relevant document repeats
    the subtopic of a previously assigned one instead of drawing fresh.
    """
    labels = np.full(config.docs_per_query, -1, dtype=int)
    assigned = []
    for doc in range(config.docs_per_query):
        if rng.random() < config.irrelevant_rate:
            continue
        if assigned and rng.random() < config.redundancy:
            labels[doc] = assigned[rng.integers(len(assigned))]
        else:
            labels[doc] = int(rng.integers(config.num_subtopics))
        assigned.append(labels[doc])
    if not assigned:  # force at least one relevant document per query
        labels[0] = int(rng.integers(config.num_subtopics))
    return labels


def generate(config: SynthConfig = SynthConfig()):
    """Build the dataset; returns (queries, channel names).

    Deterministic for a given config (one RNG stream drives everything).
    """
    rng = np.random.default_rng(config.seed)
    n = config.docs_per_query
    num_rel = config.num_relevance_features
    num_div = config.num_diversity_channels
    inf_rel = _informative_count(num_rel)
    inf_div = _informative_count(num_div)
    hi = 0.5 + 0.5 * config.diversity_signal
    lo = 0.5 - 0.5 * config.diversity_signal

    queries = []
    for q_index in range(config.num_queries):
        labels = _assign_subtopics(rng, config)
        relevant = labels >= 0

        base = np.where(relevant, RELEVANT_BASE, IRRELEVANT_BASE)
        feats = np.empty((n, num_rel))
        feats[:, :inf_rel] = base[:, None] + config.relevance_noise * rng.standard_normal((n, inf_rel))
        feats[:, inf_rel:] = rng.random((n, num_rel - inf_rel))
        np.clip(feats, 0.0, 1.0, out=feats)

        cross = relevant[:, None] & relevant[None, :] & (labels[:, None] != labels[None, :])
        pair_base = np.where(cross, hi, lo)
        pairwise = np.empty((n, n, num_div))
        for c in range(num_div):
            if c < inf_div:
                mat = pair_base + config.relevance_noise * rng.standard_normal((n, n))
            else:
                mat = rng.random((n, n))
            mat = np.triu(mat, 1)
            mat = mat + mat.T
            pairwise[:, :, c] = mat
        np.clip(pairwise, 0.0, 1.0, out=pairwise)
        for c in range(num_div):
            np.fill_diagonal(pairwise[:, :, c], 0.0)

        rel = np.zeros((config.num_subtopics, n))
        for doc, label in enumerate(labels):
            if label >= 0:
                rel[label, doc] = 1.0

        docs = [
            DocumentRecord(doc_id=f"q{q_index}d{doc}", relevance_features=feats[doc])
            for doc in range(n)
        ]
        queries.append(
            QueryInstance(
                query_id=f"synth-{q_index}",
                docs=docs,
                pairwise=pairwise,
                judgments=SubtopicJudgments.uniform(rel),
            )
        )
    return queries, channel_names(num_div)


def split_dataset(queries, ratios=(0.6, 0.2, 0.2)):
    """Deterministic contiguous train/val/test split by query order."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"bad split ratios {ratios}")
    total = sum(ratios)
    n = len(queries)
    n_train = round(n * ratios[0] / total)
    n_val = round(n * ratios[1] / total)
    train = queries[:n_train]
    val = queries[n_train : n_train + n_val]
    test = queries[n_train + n_val :]
    return train, val, test
