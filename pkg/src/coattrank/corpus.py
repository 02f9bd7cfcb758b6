"""Dataset ingestion: tokenization, vocabulary and fixed-capacity encoding."""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

N_PASSAGES = 10
MAX_QUERY_LEN = 15
MAX_DOC_LEN = 70
MIN_FREQUENCY = 3
STOPWORDS_VERSION = "en-179-v1"


class DatasetError(ValueError):
    """Malformed dataset, vocabulary or stopword file."""


@lru_cache(maxsize=None)
def load_stopwords(path: str | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("coattrank.data").joinpath("stopwords_en.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Lowercase, split on whitespace, trim edge punctuation, drop stopwords.

    >>> tokenize("What is BM25?")
    ['bm25']
    """
    stop = load_stopwords() if stopwords is None else stopwords
    out = []
    for raw in text.lower().split():
        tok = _strip_punct(raw)
        if tok and tok not in stop:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Vocabulary:
    token_to_id: dict[str, int]
    min_frequency: int = MIN_FREQUENCY
    counts: dict[str, int] = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def __len__(self):
        return self.size

    def __contains__(self, token):
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, 0)

    def to_tsv(self) -> str:
        lines = [f"{tok}\t{idx}\t{self.counts.get(tok, 0)}"
                 for tok, idx in sorted(self.token_to_id.items(), key=lambda kv: kv[1])]
        return "".join(line + "\n" for line in lines)

    def digest(self) -> str:
        """Content hash used to tie checkpoints to the vocabulary they were trained with."""
        h = hashlib.sha256(f"min_frequency={self.min_frequency}\n".encode())
        h.update(self.to_tsv().encode("utf-8"))
        return h.hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def load(cls, path, min_frequency: int = MIN_FREQUENCY) -> "Vocabulary":
        mapping, counts = {}, {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DatasetError(f"{path}:{lineno}: expected token<TAB>id<TAB>freq")
                tok, idx, freq = parts
                try:
                    mapping[tok] = int(idx)
                    counts[tok] = int(freq)
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: non-integer id or frequency") from None
        if sorted(mapping.values()) != list(range(1, len(mapping) + 1)):
            raise DatasetError(f"{path}: ids are not dense 1..{len(mapping)}")
        return cls(mapping, min_frequency, counts)


def build_vocabulary(corpus: Iterable[Sequence[str]], min_frequency: int = MIN_FREQUENCY) -> Vocabulary:
    """Keep tokens seen at least ``min_frequency`` times.

    Ids start at 1 and follow descending frequency, ties in lexicographic
    order; 0 stays reserved for OOV and padding.
    """
    if min_frequency < 1:
        raise ValueError(f"min_frequency must be >= 1, got {min_frequency}")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_frequency),
                  key=lambda t: (-counts[t], t))
    return Vocabulary({t: i for i, t in enumerate(kept, 1)}, min_frequency,
                      {t: counts[t] for t in kept})


@dataclass(frozen=True)
class EncodedSequence:
    ids: np.ndarray
    length: int
    raw_tokens: tuple[str, ...]

    @property
    def capacity(self) -> int:
        return len(self.ids)


def encode(tokens: Sequence[str], vocab: Vocabulary, capacity: int) -> EncodedSequence:
    if capacity < 1:
        raise ValueError(f"capacity must be >= 1, got {capacity}")
    kept = tuple(tokens[:capacity])
    ids = np.zeros(capacity, dtype=np.int64)
    for i, tok in enumerate(kept):
        ids[i] = vocab.id_of(tok)
    return EncodedSequence(ids, len(kept), kept)


@dataclass(frozen=True)
class QuerySample:
    query_id: str
    query_tokens: tuple[str, ...]
    passages: tuple[tuple[str, ...], ...]
    gold_index: int | None = None

    def __post_init__(self):
        if self.gold_index is not None and not 0 <= self.gold_index < len(self.passages):
            raise ValueError(f"gold_index {self.gold_index} out of range for "
                             f"{len(self.passages)} passages")

    @property
    def n_passages(self) -> int:
        return len(self.passages)


def _parse_group(rows, labeled, n_passages, path):
    qid, first_line = rows[0][0], rows[0][1]
    if len(rows) != n_passages:
        raise DatasetError(f"{path}:{first_line}: query {qid!r}: expected {n_passages} "
                           f"passages, found {len(rows)}")
    query_text = rows[0][2][1]
    passages, gold = [], []
    for i, (_, lineno, fields) in enumerate(rows):
        passages.append(tuple(tokenize(fields[2])))
        if labeled:
            if fields[3] not in ("0", "1"):
                raise DatasetError(f"{path}:{lineno}: label must be 0 or 1, got {fields[3]!r}")
            if fields[3] == "1":
                gold.append((i, lineno))
    gold_index = None
    if labeled:
        if not gold:
            raise DatasetError(f"{path}:{first_line}: query {qid!r} has no gold label")
        if len(gold) > 1:
            raise DatasetError(f"{path}:{gold[1][1]}: query {qid!r} has multiple gold labels")
        gold_index = gold[0][0]
    return QuerySample(qid, tuple(tokenize(query_text)), tuple(passages), gold_index)


def load_dataset(path, labeled: bool = True, n_passages: int = N_PASSAGES) -> Iterator[QuerySample]:
    """Stream QuerySamples from the five-column TSV, one query group at a time.

    Columns: query_id, query_text, passage_text, label (0|1), passage_index.
    """
    seen: set[str] = set()
    rows: list = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise DatasetError(f"{path}:{lineno}: expected 5 tab-separated fields, "
                                   f"found {len(fields)}")
            try:
                int(fields[4])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: passage_index is not an integer") from None
            qid = fields[0]
            if rows and rows[0][0] != qid:
                yield _parse_group(rows, labeled, n_passages, path)
                rows = []
            if not rows:
                if qid in seen:
                    raise DatasetError(f"{path}:{lineno}: rows for query {qid!r} are not contiguous")
                seen.add(qid)
            rows.append((qid, lineno, fields))
    if rows:
        yield _parse_group(rows, labeled, n_passages, path)


def write_dataset(samples: Iterable[tuple[str, str, Sequence[str], int | None]], path) -> None:
    """Write raw-text samples (query_id, query_text, passage_texts, gold_index) as TSV."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, qtext, ptexts, gold in samples:
            for i, ptext in enumerate(ptexts):
                label = 1 if gold == i else 0
                fh.write(f"{qid}\t{qtext}\t{ptext}\t{label}\t{i}\n")


def split_train_dev(dataset: Sequence[QuerySample], dev_count: int, seed: int = 0):
    """Seed-deterministic disjoint split; order within each part follows the input."""
    n = len(dataset)
    if dev_count >= n:
        raise ValueError(f"dev_count {dev_count} must be smaller than dataset size {n}")
    if dev_count < 0:
        raise ValueError("dev_count must be non-negative")
    dev_idx = set(np.random.default_rng(seed).choice(n, size=dev_count, replace=False).tolist())
    train = [s for i, s in enumerate(dataset) if i not in dev_idx]
    dev = [s for i, s in enumerate(dataset) if i in dev_idx]
    return train, dev
