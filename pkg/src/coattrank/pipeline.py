"""Glue between raw QuerySamples and the scorer: lookups, features, ranking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import QuerySample, Vocabulary, encode
from .embeddings import EmbeddingTriple
from .features import CorpusStats, NormStats, bm25, tf_idf
from .model import ModelParams, forward_pair, score_passages
from .ranking import PDM, RankingResult, exact_rank, greedy_rank, pdm_from_scores


@dataclass
class PreparedSample:
    query_id: str
    query: np.ndarray            # (3, embed_dim, n)
    passages: list[np.ndarray]   # each (3, embed_dim, m_i)
    features: np.ndarray         # (n_passages, 3), normalised when norm stats exist
    gold_index: int | None

    @property
    def n_passages(self) -> int:
        return len(self.passages)


def raw_features(sample: QuerySample, stats: CorpusStats) -> np.ndarray:
    return np.array([[len(p), bm25(sample.query_tokens, p, stats),
                      tf_idf(sample.query_tokens, p, stats)] for p in sample.passages],
                    dtype=np.float64)


class Featurizer:
    """Turns QuerySamples into model inputs under fixed vocabulary and statistics."""

    def __init__(self, vocab: Vocabulary, banks: EmbeddingTriple, stats: CorpusStats,
                 norm: NormStats | None, max_query_len: int, max_doc_len: int):
        self.vocab = vocab
        self.banks = banks
        self.stats = stats
        self.norm = norm
        self.max_query_len = max_query_len
        self.max_doc_len = max_doc_len

    def prepare(self, sample: QuerySample) -> PreparedSample:
        q = self.banks.embed(encode(sample.query_tokens, self.vocab, self.max_query_len))
        ps = [self.banks.embed(encode(p, self.vocab, self.max_doc_len)) for p in sample.passages]
        feats = raw_features(sample, self.stats)
        if self.norm is not None:
            feats = self.norm.apply(feats)
        return PreparedSample(sample.query_id, q, ps, feats, sample.gold_index)


def sample_scores(prepared: PreparedSample, params: ModelParams) -> np.ndarray:
    return score_passages(prepared.query, prepared.passages, prepared.features, params)


def build_pdm(prepared: PreparedSample, params: ModelParams) -> tuple[PDM, np.ndarray]:
    """PDM from one eval-mode score per passage, plus those scores."""
    if prepared.n_passages < 2:
        raise ValueError(f"need at least 2 passages, got {prepared.n_passages}")
    scores = sample_scores(prepared, params)
    return pdm_from_scores(scores), scores


def pairwise_pdm(prepared: PreparedSample, params: ModelParams, pairs=None) -> np.ndarray:
    """Evaluate the pair softmax literally for the given (i, j) pairs (all by default).

    Returns an n x n array with NaN where a pair was not evaluated.
    """
    n = prepared.n_passages
    out = np.full((n, n), np.nan)
    if pairs is None:
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    for i, j in pairs:
        p1, _ = forward_pair(prepared.query, prepared.passages[i], prepared.passages[j],
                             prepared.features[i], prepared.features[j], params)
        out[i, j] = p1.item()
    return out


def rank_prepared(prepared: PreparedSample, params: ModelParams, exact: bool = False,
                  paranoid: bool = False, rng: np.random.Generator | None = None,
                  tol: float = 1e-9) -> RankingResult:
    pdm, _ = build_pdm(prepared, params)
    if paranoid:
        rng = rng or np.random.default_rng(0)
        n = prepared.n_passages
        all_pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        picks = rng.choice(len(all_pairs), size=min(10, len(all_pairs)), replace=False)
        pairs = [all_pairs[k] for k in picks]
        literal = pairwise_pdm(prepared, params, pairs)
        for i, j in pairs:
            if abs(literal[i, j] - pdm.R[i, j]) > tol:
                raise AssertionError(
                    f"query {prepared.query_id}: pair ({i}, {j}) literal probability "
                    f"{literal[i, j]!r} != PDM entry {pdm.R[i, j]!r}")
    return exact_rank(pdm) if exact else greedy_rank(pdm)

