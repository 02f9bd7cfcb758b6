"""Pairwise co-attention passage ranking with probability-matrix inference."""

from .corpus import QuerySample, Vocabulary, build_vocabulary, encode, load_dataset, tokenize
from .estimator import BM25Ranker, CoAttentionRanker
from .features import CorpusStats, IRFeatureTransformer, bm25, corpus_stats, tf_idf
from .model import ModelConfig, ModelParams
from .ranking import PDM, RankingResult, consistency_check, exact_rank, greedy_rank, mrr
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BM25Ranker", "CoAttentionRanker", "CorpusStats", "IRFeatureTransformer", "ModelConfig",
    "ModelParams", "PDM", "QuerySample", "RankingResult", "TrainConfig", "Vocabulary",
    "bm25", "build_vocabulary", "consistency_check", "corpus_stats", "encode", "exact_rank",
    "greedy_rank", "load_dataset", "mrr", "tf_idf", "tokenize",
]
