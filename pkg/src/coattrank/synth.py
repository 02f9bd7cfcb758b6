"""Seed-deterministic synthetic query/passage data over a closed token inventory.

Every query has exactly one gold passage sharing at least three query terms
and nine distractors sharing at most one.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import N_PASSAGES, load_stopwords, write_dataset
from .embeddings import synth_banks, write_vectors

_ONSETS = "b c d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()
_FILLERS = ["the", "of", "and", "is", "in", "a", "to"]


def token_inventory(size: int, rng: np.random.Generator) -> list[str]:
    stop = load_stopwords()
    seen: set[str] = set()
    out = []
    while len(out) < size:
        n_syl = int(rng.integers(2, 4))
        word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(n_syl))
        if word not in seen and word not in stop:
            seen.add(word)
            out.append(word)
    return out


def _passage(rng, inventory, exclude, include, length) -> list[str]:
    pool = [t for t in inventory if t not in exclude]
    body = list(include) + list(rng.choice(pool, size=length - len(include)))
    rng.shuffle(body)
    # sprinkle stopwords so the tokenizer has something to remove
    for _ in range(int(rng.integers(0, 3))):
        body.insert(int(rng.integers(len(body) + 1)), str(rng.choice(_FILLERS)))
    return body


def generate(n_queries: int, seed: int, vocab_size: int = 120, query_len=(4, 6),
             passage_len=(10, 24), n_passages: int = N_PASSAGES, prefix: str = "q"):
    """Returns a list of (query_id, query_text, passage_texts, gold_index)."""
    rng = np.random.default_rng(seed)
    inventory = token_inventory(vocab_size, rng)
    samples = []
    for qi in range(n_queries):
        q_terms = list(rng.choice(inventory, size=int(rng.integers(query_len[0], query_len[1] + 1)),
                                  replace=False))
        gold = int(rng.integers(n_passages))
        passages = []
        for pi in range(n_passages):
            length = int(rng.integers(passage_len[0], passage_len[1] + 1))
            if pi == gold:
                k = int(rng.integers(3, len(q_terms) + 1))
                include = list(rng.choice(q_terms, size=k, replace=False))
            else:
                include = list(rng.choice(q_terms, size=int(rng.integers(0, 2)), replace=False))
            passages.append(" ".join(_passage(rng, inventory, set(q_terms), include, length)))
        qtext = "what is " + " ".join(q_terms) + "?"
        samples.append((f"{prefix}{qi:05d}", qtext, passages, gold))
    return samples, inventory


def write_synth(out_dir, seed: int = 0, n_queries: int = 200, n_dev: int = 50, dim: int = 32,
                vocab_size: int = 120) -> dict[str, Path]:
    """Write train.tsv, dev.tsv and the three embedding banks (plus a subword table)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples, inventory = generate(n_queries + n_dev, seed, vocab_size)
    paths = {"train": out / "train.tsv", "dev": out / "dev.tsv"}
    write_dataset(samples[:n_queries], paths["train"])
    write_dataset(samples[n_queries:], paths["dev"])
    banks = synth_banks(inventory, dim, seed + 1, n_subword_tokens=len(inventory) // 4)
    for role in ("w2v", "glove", "fasttext", "subwords"):
        paths[role] = out / f"{role}.txt"
        write_vectors(banks[role], paths[role])
    return paths
