"""Hand-crafted relevance features: document length, Okapi BM25 and TF-IDF."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import DatasetError

BM25_K1 = 1.2
BM25_B = 0.75
STATS_MAGIC = "coattrank-corpus-stats"
STATS_VERSION = 1


@dataclass
class CorpusStats:
    doc_count: int = 0
    doc_freq: dict[str, int] = field(default_factory=dict)
    avg_doc_len: float = 0.0

    def idf_bm25(self, token: str) -> float:
        df = self.doc_freq.get(token, 0)
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def save(self, path) -> None:
        lines = [f"format\t{STATS_MAGIC}", f"version\t{STATS_VERSION}",
                 f"doc_count\t{self.doc_count}", f"avg_doc_len\t{self.avg_doc_len.hex()}"]
        lines += [f"df\t{tok}\t{df}" for tok, df in sorted(self.doc_freq.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CorpusStats":
        stats = cls()
        header = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if parts == [""]:
                    continue
                if parts[0] == "df" and len(parts) == 3:
                    stats.doc_freq[parts[1]] = int(parts[2])
                elif len(parts) == 2:
                    header[parts[0]] = parts[1]
                else:
                    raise DatasetError(f"{path}:{lineno}: malformed stats line")
        if header.get("format") != STATS_MAGIC or header.get("version") != str(STATS_VERSION):
            raise DatasetError(f"{path}: not a version-{STATS_VERSION} corpus stats file")
        stats.doc_count = int(header["doc_count"])
        stats.avg_doc_len = float.fromhex(header["avg_doc_len"])
        return stats


def corpus_stats(documents: Iterable[Sequence[str]]) -> CorpusStats:
    df = Counter()
    n_docs = 0
    total = 0
    for doc in documents:
        n_docs += 1
        total += len(doc)
        df.update(set(doc))
    avg = total / n_docs if n_docs else 0.0
    return CorpusStats(n_docs, dict(df), avg)


def bm25(query: Sequence[str], doc: Sequence[str], stats: CorpusStats,
         k1: float = BM25_K1, b: float = BM25_B) -> float:
    """Okapi BM25 of ``doc`` for ``query`` (repeated query terms count once)."""
    if not doc:
        return 0.0
    tf = Counter(doc)
    norm = k1 * (1.0 - b + b * len(doc) / stats.avg_doc_len) if stats.avg_doc_len > 0 else k1
    score = 0.0
    for term in sorted(set(query)):
        f = tf.get(term, 0)
        if f:
            score += stats.idf_bm25(term) * f * (k1 + 1.0) / (f + norm)
    return score


def tf_idf(query: Sequence[str], doc: Sequence[str], stats: CorpusStats) -> float:
    tf = Counter(doc)
    score = 0.0
    for term in sorted(set(query)):
        f = tf.get(term, 0)
        df = stats.doc_freq.get(term, 0)
        if f and df:
            score += f * math.log(stats.doc_count / df)
    return score


@dataclass(frozen=True)
class FeatureVector:
    length: float
    bm25: float
    tf_idf: float

    def as_array(self) -> np.ndarray:
        return np.array([self.length, self.bm25, self.tf_idf], dtype=np.float64)


@dataclass(frozen=True)
class NormStats:
    """Per-component mean and standard deviation of training-set features."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    @classmethod
    def fit(cls, rows: np.ndarray) -> "NormStats":
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
        if len(rows) == 0:
            return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        return cls(tuple(rows.mean(axis=0).tolist()), tuple(rows.std(axis=0).tolist()))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        mean, std = np.array(self.mean), np.array(self.std)
        safe = np.where(std > 0, std, 1.0)
        return np.where(std > 0, (raw - mean) / safe, 0.0)


def feature_vector(query: Sequence[str], doc: Sequence[str], stats: CorpusStats,
                   norm: NormStats | None = None) -> FeatureVector:
    raw = FeatureVector(float(len(doc)), bm25(query, doc, stats), tf_idf(query, doc, stats))
    if norm is None:
        return raw
    return FeatureVector(*norm.apply(raw.as_array()).tolist())


class IRFeatureTransformer(TransformerMixin, BaseEstimator):
    """Fit corpus statistics and z-score parameters on training queries.

    ``transform`` maps a list of QuerySamples to an array of shape
    (n_queries, n_passages, 3) holding (length, bm25, tf_idf) per passage.
    """

    def __init__(self, normalize=True, k1=BM25_K1, b=BM25_B):
        self.normalize = normalize
        self.k1 = k1
        self.b = b

    def fit(self, X, y=None):
        self.stats_ = corpus_stats(p for sample in X for p in sample.passages)
        self.norm_ = NormStats.fit(self._raw(X)) if self.normalize else None
        return self

    def _raw(self, X) -> np.ndarray:
        out = []
        for sample in X:
            out.append([[len(p), bm25(sample.query_tokens, p, self.stats_, self.k1, self.b),
                         tf_idf(sample.query_tokens, p, self.stats_)] for p in sample.passages])
        return np.asarray(out, dtype=np.float64).reshape(len(out), -1, 3)

    def transform(self, X):
        check_is_fitted(self, "stats_")
        raw = self._raw(X)
        return raw if self.norm_ is None else self.norm_.apply(raw)
