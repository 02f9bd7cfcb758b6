"""scikit-learn compatible front ends.

``X`` is always a sequence of :class:`~coattrank.corpus.QuerySample`; ``y``
(optional) overrides their gold indices. ``predict`` returns an integer
array of shape (n_queries, n_passages) with 1-based ranks per passage.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import MIN_FREQUENCY, QuerySample, build_vocabulary
from .embeddings import EmbeddingTriple
from .features import BM25_B, BM25_K1, NormStats, bm25, corpus_stats
from .model import ModelConfig
from .pipeline import Featurizer, raw_features, rank_prepared, sample_scores
from .ranking import RankingResult, mrr
from .training import TrainConfig, train

log = logging.getLogger(__name__)


def check_query_samples(X, y=None, labeled=False, min_passages=2) -> list[QuerySample]:
    """Validate and normalise ``X`` (and optional gold indices ``y``)."""
    if isinstance(X, QuerySample):
        raise TypeError("X must be a sequence of QuerySample, got a single sample")
    samples = list(X)
    if not samples:
        raise ValueError("X contains no query samples")
    for s in samples:
        if not isinstance(s, QuerySample):
            raise TypeError(f"expected QuerySample, got {type(s).__name__}")
        if s.n_passages < min_passages:
            raise ValueError(f"query {s.query_id!r} has {s.n_passages} passages; "
                             f"need at least {min_passages}")
    if y is not None:
        y = np.asarray(y).astype(int).ravel()
        if len(y) != len(samples):
            raise ValueError(f"y has {len(y)} entries for {len(samples)} samples")
        samples = [QuerySample(s.query_id, s.query_tokens, s.passages, int(g))
                   for s, g in zip(samples, y)]
    if labeled:
        missing = [s.query_id for s in samples if s.gold_index is None]
        if missing:
            raise ValueError(f"{len(missing)} samples lack a gold label, e.g. {missing[0]!r}")
    return samples


def _ranks(results) -> np.ndarray:
    return np.stack([r.rank for r in results])


class CoAttentionRanker(BaseEstimator):
    """Pairwise co-attention passage ranker.

    Hyperparameter defaults are the full-scale settings; shrink
    ``hidden``, ``lstm_layers`` and ``epochs`` for desk-scale runs.
    ``banks`` is an :class:`EmbeddingTriple` and fixes ``embed_dim``.
    """

    def __init__(self, banks=None, hidden=500, lstm_layers=2, dropout=0.2, max_query_len=15,
                 max_doc_len=70, init_range=0.01, epochs=100, batch_size=256, lr=0.001,
                 clip_norm=5.0, min_frequency=MIN_FREQUENCY, normalize_features=True,
                 ranking="greedy", seed=0):
        self.banks = banks
        self.hidden = hidden
        self.lstm_layers = lstm_layers
        self.dropout = dropout
        self.max_query_len = max_query_len
        self.max_doc_len = max_doc_len
        self.init_range = init_range
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.clip_norm = clip_norm
        self.min_frequency = min_frequency
        self.normalize_features = normalize_features
        self.ranking = ranking
        self.seed = seed

    def _configs(self):
        if not isinstance(self.banks, EmbeddingTriple):
            raise ValueError("banks must be an EmbeddingTriple")
        if self.ranking not in ("greedy", "exact"):
            raise ValueError(f"ranking must be 'greedy' or 'exact', got {self.ranking!r}")
        model_cfg = ModelConfig(embed_dim=self.banks.dim, hidden=self.hidden,
                                lstm_layers=self.lstm_layers, dropout=self.dropout,
                                max_query_len=self.max_query_len, max_doc_len=self.max_doc_len,
                                init_range=self.init_range)
        train_cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                                clip_norm=self.clip_norm, seed=self.seed)
        return model_cfg, train_cfg

    def fit(self, X, y=None, eval_set=None):
        samples = check_query_samples(X, y, labeled=True)
        model_cfg, train_cfg = self._configs()
        self.vocab_ = build_vocabulary(
            (toks for s in samples for toks in (s.query_tokens, *s.passages)), self.min_frequency)
        self.stats_ = corpus_stats(p for s in samples for p in s.passages)
        self.norm_ = None
        if self.normalize_features:
            self.norm_ = NormStats.fit(np.concatenate([raw_features(s, self.stats_) for s in samples]))
        self.featurizer_ = Featurizer(self.vocab_, self.banks, self.stats_, self.norm_,
                                      model_cfg.max_query_len, model_cfg.max_doc_len)
        prepared = [self.featurizer_.prepare(s) for s in samples]
        dev = []
        if eval_set is not None:
            dev = [self.featurizer_.prepare(s) for s in check_query_samples(eval_set, labeled=True)]
        self.history_ = []
        result = None
        for result in train(prepared, model_cfg, train_cfg, dev, self.norm_, self.vocab_.digest()):
            self.history_.append((result.epoch, result.mean_loss, result.dev_mrr))
        self.checkpoint_ = result.checkpoint
        self.params_ = result.checkpoint.model_params()
        return self

    def decision_function(self, X) -> np.ndarray:
        """Eval-mode score of every passage, shape (n_queries, n_passages)."""
        check_is_fitted(self, "params_")
        samples = check_query_samples(X)
        return np.stack([sample_scores(self.featurizer_.prepare(s), self.params_) for s in samples])

    def rank(self, X, paranoid=False) -> list[RankingResult]:
        check_is_fitted(self, "params_")
        return [rank_prepared(self.featurizer_.prepare(s), self.params_,
                              exact=self.ranking == "exact", paranoid=paranoid)
                for s in check_query_samples(X)]

    def predict(self, X) -> np.ndarray:
        return _ranks(self.rank(X))

    def score(self, X, y=None) -> float:
        """Mean reciprocal rank of the gold passages."""
        samples = check_query_samples(X, y, labeled=True)
        return mrr(zip(self.rank(samples), (s.gold_index for s in samples)))


class BM25Ranker(BaseEstimator):
    """Ranks passages by Okapi BM25 against statistics fitted on training passages."""

    def __init__(self, k1=BM25_K1, b=BM25_B):
        self.k1 = k1
        self.b = b

    def fit(self, X, y=None):
        samples = check_query_samples(X, y)
        self.stats_ = corpus_stats(p for s in samples for p in s.passages)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "stats_")
        return np.array([[bm25(s.query_tokens, p, self.stats_, self.k1, self.b) for p in s.passages]
                         for s in check_query_samples(X)])

    def rank(self, X) -> list[RankingResult]:
        return [RankingResult.from_order(np.argsort(-row, kind="stable"))
                for row in self.decision_function(X)]

    def predict(self, X) -> np.ndarray:
        return _ranks(self.rank(X))

    def score(self, X, y=None) -> float:
        samples = check_query_samples(X, y, labeled=True)
        return mrr(zip(self.rank(samples), (s.gold_index for s in samples)))
