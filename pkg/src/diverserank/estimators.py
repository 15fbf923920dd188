"""Estimator-style front end: fit/predict objects over the functional core.

These wrap the training and ranking routines in the familiar
BaseEstimator protocol (get_params/set_params, fit returning self) so
the rankers drop into pipelines, grid searches and clones. X is always a
list of QueryInstance objects; predictions are lists of document-index
rankings aligned with X.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import baselines, features, metrics, model, trainer
from .types import DegenerateQueryError, MeasureParams, QueryInstance


def check_query_instances(X) -> list:
    """Validate that X is a non-empty, dimensionally consistent instance list."""
    X = list(X)
    if not X:
        raise ValueError("X must contain at least one QueryInstance")
    for q in X:
        if not isinstance(q, QueryInstance):
            raise TypeError(f"expected QueryInstance, got {type(q).__name__}")
    num_rel = {q.num_relevance_features for q in X}
    num_div = {q.num_diversity_channels for q in X}
    if len(num_rel) > 1 or len(num_div) > 1:
        raise ValueError(f"inconsistent feature dimensions across queries: R={sorted(num_rel)}, F={sorted(num_div)}")
    return X


class _RankerMixin:
    """Shared scoring for estimators whose predictions are rankings."""

    def score(self, X, y=None):
        """Mean normalized diversity score of the predicted rankings."""
        X = check_query_instances(X)
        params = self._measure_params()
        rankings = self.predict(X)
        scores = []
        for q, ranking in zip(X, rankings):
            try:
                scores.append(metrics.dcem(ranking, q, params))
            except DegenerateQueryError:
                continue
        return float(np.mean(scores)) if scores else 0.0


class DiverseRankingSVM(_RankerMixin, BaseEstimator):
    """Max-margin bi-criteria ranker trained by cutting planes.

    Parameters mirror the training configuration; fitted attributes are
    coef_rel_, coef_div_ (the weight blocks), weights_ (the pair) and
    stats_ (the training trace).
    """

    def __init__(
        self,
        measure: str = "err-ia",
        alpha: float = 0.5,
        beta: float = 0.5,
        cutoff: int = 20,
        C: float = 100.0,
        epsilon: float = 1e-3,
        max_outer_iters: int = 200,
        qp_tol: float = 1e-8,
        n_jobs: int = 1,
    ):
        self.measure = measure
        self.alpha = alpha
        self.beta = beta
        self.cutoff = cutoff
        self.C = C
        self.epsilon = epsilon
        self.max_outer_iters = max_outer_iters
        self.qp_tol = qp_tol
        self.n_jobs = n_jobs

    def _measure_params(self) -> MeasureParams:
        return MeasureParams(measure=self.measure, alpha=self.alpha, beta=self.beta, cutoff=self.cutoff)

    def fit(self, X, y=None):
        """Learn weights from QueryInstances; y may carry precomputed targets."""
        X = check_query_instances(X)
        cfg = trainer.TrainConfig(
            C=self.C,
            epsilon=self.epsilon,
            max_outer_iters=self.max_outer_iters,
            qp_tol=self.qp_tol,
            params=self._measure_params(),
        )
        weights, stats = trainer.cutting_plane_train(X, cfg, targets=y, n_jobs=self.n_jobs)
        self.weights_ = weights
        self.coef_rel_ = weights.w_rel
        self.coef_div_ = weights.w_div
        self.stats_ = stats
        return self

    def predict(self, X):
        """Greedy discriminant rankings, one per instance."""
        X = check_query_instances(X)
        if not hasattr(self, "weights_"):
            raise RuntimeError("estimator is not fitted")
        return [model.predict(self.weights_, q, self.cutoff) for q in X]


class RelevanceRanker(_RankerMixin, BaseEstimator):
    """Sort-by-score baseline; score is one feature column or their mean."""

    def __init__(self, cutoff: int = 20, score_channel=None, measure: str = "err-ia",
                 alpha: float = 0.5, beta: float = 0.5):
        self.cutoff = cutoff
        self.score_channel = score_channel
        self.measure = measure
        self.alpha = alpha
        self.beta = beta

    def _measure_params(self) -> MeasureParams:
        return MeasureParams(measure=self.measure, alpha=self.alpha, beta=self.beta, cutoff=self.cutoff)

    def fit(self, X, y=None):
        check_query_instances(X)
        return self

    def predict(self, X):
        X = check_query_instances(X)
        return [
            baselines.relevance_rank(baselines.relevance_scores(q, self.score_channel), self.cutoff)
            for q in X
        ]


class MMRRanker(_RankerMixin, BaseEstimator):
    """Marginal-relevance baseline with grid-tuned trade-off.

    With lam=None, fit picks the grid value with the best mean normalized
    score on the fit data (pass the validation split there); otherwise
    fit just records the fixed value.
    """

    def __init__(
        self,
        lam=None,
        grid=baselines.DEFAULT_LAMBDA_GRID,
        sim_channel: int = 1,
        score_channel=None,
        cutoff: int = 20,
        measure: str = "err-ia",
        alpha: float = 0.5,
        beta: float = 0.5,
    ):
        self.lam = lam
        self.grid = grid
        self.sim_channel = sim_channel
        self.score_channel = score_channel
        self.cutoff = cutoff
        self.measure = measure
        self.alpha = alpha
        self.beta = beta

    def _measure_params(self) -> MeasureParams:
        return MeasureParams(measure=self.measure, alpha=self.alpha, beta=self.beta, cutoff=self.cutoff)

    def fit(self, X, y=None):
        X = check_query_instances(X)
        if self.lam is None:
            self.lambda_ = baselines.tune_mmr_lambda(
                X,
                self._measure_params(),
                grid=self.grid,
                sim_channel=self.sim_channel,
                score_channel=self.score_channel,
            )
        else:
            self.lambda_ = float(self.lam)
        return self

    def predict(self, X):
        X = check_query_instances(X)
        if not hasattr(self, "lambda_"):
            raise RuntimeError("estimator is not fitted")
        return [
            baselines.mmr_rank(
                baselines.relevance_scores(q, self.score_channel),
                baselines.similarity_from_channel(q, self.sim_channel),
                self.lambda_,
                self.cutoff,
            )
            for q in X
        ]


class PlsaTopicModel(BaseEstimator, TransformerMixin):
    """pLSA as a transformer: fit on a count matrix, transform to topic rows.

    transform on unseen documents folds them in with the word-topic table
    frozen; on the training matrix it reproduces the fitted rows.
    """

    def __init__(self, n_topics: int = 20, max_iter: int = 200, tol: float = 1e-4, random_state: int = 0):
        self.n_topics = n_topics
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        self.model_ = features.plsa_fit(
            X, self.n_topics, max_iters=self.max_iter, tol=self.tol, seed=self.random_state
        )
        self._fit_shape = X.shape
        self.doc_topic_ = self.model_.doc_topic
        self.word_topic_ = self.model_.word_topic
        return self

    def transform(self, X):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return features.plsa_fold_in(X, self.model_)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).doc_topic_
