"""Fixed word-vector banks in the three roles (word2vec, GloVe, FastText)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import DatasetError, EncodedSequence, Vocabulary

ROLES = ("w2v", "glove", "fasttext")
EMBED_DIM = 300
MIN_NGRAM = 3
MAX_NGRAM = 6


@dataclass
class EmbeddingBank:
    role: str
    dim: int | None = None
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    subwords: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown embedding role {self.role!r}; expected one of {ROLES}")
        if self.subwords is not None and self.role != "fasttext":
            raise ValueError("subword tables are only allowed for the fasttext role")

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, token):
        return token in self.vectors


def char_ngrams(token: str, nmin: int = MIN_NGRAM, nmax: int = MAX_NGRAM) -> list[str]:
    """Character n-grams of the token wrapped in '<' and '>' boundary markers."""
    word = f"<{token}>"
    return [word[i:i + n] for n in range(nmin, nmax + 1) for i in range(len(word) - n + 1)]


def _read_vectors(path, dim: int | None = None) -> tuple[int | None, dict[str, np.ndarray]]:
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise DatasetError(f"{path}:{lineno}: vector has no components")
            elif len(values) != dim:
                raise DatasetError(f"{path}:{lineno}: expected {dim} components, found {len(values)}")
            if token in vectors:
                raise DatasetError(f"{path}:{lineno}: duplicate token {token!r}")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric component") from None
            if not np.isfinite(vec).all():
                raise DatasetError(f"{path}:{lineno}: non-finite component")
            vectors[token] = vec
    return dim, vectors


def load_bank(path, role: str, subword_path=None) -> EmbeddingBank:
    """Read a ``token v1 ... v_dim`` text file; the first line fixes the dimension."""
    dim, vectors = _read_vectors(path)
    subwords = None
    if subword_path is not None:
        if role != "fasttext":
            raise ValueError("subword tables are only allowed for the fasttext role")
        dim, subwords = _read_vectors(subword_path, dim)
    return EmbeddingBank(role, dim, vectors, subwords)


def write_vectors(vectors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in vectors.items():
            fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def lookup(bank: EmbeddingBank, token: str, in_vocab: bool = True) -> np.ndarray:
    """Vector for ``token``; OOV falls back to FastText subwords or to zeros.

    ``in_vocab=False`` treats the token as unknown even if the bank stores it
    (tokens below the vocabulary frequency cut).
    """
    dim = bank.dim or 0
    if in_vocab:
        vec = bank.vectors.get(token)
        if vec is not None:
            return vec.copy()
    if bank.subwords:
        hits = [bank.subwords[g] for g in char_ngrams(token) if g in bank.subwords]
        if hits:
            return np.mean(hits, axis=0)
    return np.zeros(dim, dtype=np.float64)


class EmbeddingTriple:
    """The three banks in (w2v, glove, fasttext) order, sharing one dimension."""

    def __init__(self, banks: Sequence[EmbeddingBank]):
        if len(banks) != 3:
            raise ValueError(f"need exactly 3 banks, got {len(banks)}")
        if tuple(b.role for b in banks) != ROLES:
            raise ValueError(f"banks must be ordered {ROLES}, got {tuple(b.role for b in banks)}")
        dims = {b.dim for b in banks if b.dim is not None}
        if len(dims) > 1:
            raise ValueError(f"embedding banks disagree on dimension: "
                             f"{[b.dim for b in banks]}")
        if not dims:
            raise ValueError("cannot infer embedding dimension: all banks are empty")
        self.dim = dims.pop()
        for b in banks:
            if b.dim is None:
                b.dim = self.dim
        self.banks = tuple(banks)
        self._cache: dict[tuple[str, bool], np.ndarray] = {}

    def triple_lookup(self, token: str, in_vocab: bool = True) -> np.ndarray:
        """Array of shape (3, dim): one row per bank."""
        key = (token, in_vocab)
        out = self._cache.get(key)
        if out is None:
            out = np.stack([lookup(b, token, in_vocab) for b in self.banks])
            out.setflags(write=False)
            self._cache[key] = out
        return out

    def embed(self, seq: EncodedSequence) -> np.ndarray:
        """Array of shape (3, dim, length) for the real positions of ``seq``.

        An empty sequence becomes one zero (padding) position so that every
        query and passage can be encoded.
        """
        if seq.length == 0:
            return np.zeros((3, self.dim, 1))
        vecs = [self.triple_lookup(tok, bool(seq.ids[i]))
                for i, tok in enumerate(seq.raw_tokens[:seq.length])]
        return np.stack(vecs, axis=2)

    def embed_tokens(self, tokens: Sequence[str], vocab: Vocabulary | None = None) -> np.ndarray:
        vecs = [self.triple_lookup(t, vocab is None or t in vocab) for t in tokens]
        if not vecs:
            return np.zeros((3, self.dim, 1))
        return np.stack(vecs, axis=2)


def load_triple(w2v_path, glove_path, fasttext_path, subword_path=None) -> EmbeddingTriple:
    return EmbeddingTriple([load_bank(w2v_path, "w2v"), load_bank(glove_path, "glove"),
                            load_bank(fasttext_path, "fasttext", subword_path)])


def synth_banks(tokens: Iterable[str], dim: int, seed: int, coverage: float = 0.9,
                n_subword_tokens: int = 0) -> dict[str, dict[str, np.ndarray]]:
    """Seed-deterministic random banks for tests and desk-scale runs.

    Each role stores a random unit-scale vector for roughly ``coverage`` of
    the tokens (the FastText role stores all). When ``n_subword_tokens`` > 0
    a subword table is filled from the n-grams of that many tokens.
    """
    rng = np.random.default_rng(seed)
    tokens = sorted(set(tokens))
    scale = 1.0 / math.sqrt(dim)
    out: dict[str, dict[str, np.ndarray]] = {}
    for role in ROLES:
        table = {}
        for tok in tokens:
            vec = rng.normal(0.0, scale, dim)
            if role == "fasttext" or rng.random() < coverage:
                table[tok] = vec
        out[role] = table
    if n_subword_tokens:
        grams = sorted({g for tok in tokens[:n_subword_tokens] for g in char_ngrams(tok)})
        out["subwords"] = {g: rng.normal(0.0, scale, dim) for g in grams}
    return out
