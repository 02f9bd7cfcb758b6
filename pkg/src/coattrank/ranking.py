"""Inference-time ranking from pairwise win probabilities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tensor import sigmoid_array

MAX_EXACT_N = 20


@dataclass(frozen=True)
class PDM:
    """Pairwise probability matrix: R[i, j] = P(document i beats document j)."""

    R: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError(f"PDM must be square, got shape {R.shape}")
        if R.size and (R.min() < 0.0 or R.max() > 1.0):
            raise ValueError("PDM entries must lie in [0, 1]")
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @classmethod
    def from_upper(cls, upper: np.ndarray) -> "PDM":
        """Build from the strict upper triangle; the lower triangle is its complement."""
        upper = np.asarray(upper, dtype=np.float64)
        n = upper.shape[0]
        R = np.full((n, n), 0.5)
        iu = np.triu_indices(n, 1)
        R[iu] = upper[iu]
        R[iu[1], iu[0]] = 1.0 - upper[iu]
        return cls(R)

    def wins(self) -> np.ndarray:
        """0/1 edge weights: w[u, v] = 1 iff R[u, v] > R[v, u] (ties give no edge)."""
        return (self.R > self.R.T).astype(np.int64)


@dataclass(frozen=True)
class RankingResult:
    rank: np.ndarray   # rank[i] = 1-based rank of document i
    order: np.ndarray  # order[k] = document at rank k+1

    @classmethod
    def from_order(cls, order: Sequence[int]) -> "RankingResult":
        order = np.asarray(order, dtype=np.int64)
        rank = np.empty_like(order)
        rank[order] = np.arange(1, len(order) + 1)
        return cls(rank, order)


def pdm_from_scores(scores: Sequence[float]) -> PDM:
    """R[i, j] = sigmoid(s_i - s_j); identical to evaluating every ordered pair."""
    s = np.asarray(scores, dtype=np.float64)
    if len(s) < 2:
        raise ValueError(f"need at least 2 passages to build a PDM, got {len(s)}")
    return PDM.from_upper(sigmoid_array(s[:, None] - s[None, :]))


def greedy_rank(pdm: PDM) -> RankingResult:
    """Order documents by descending PDM row sum, lower index first on ties."""
    totals = pdm.R.sum(axis=1)
    return RankingResult.from_order(np.argsort(-totals, kind="stable"))


def path_sum(pdm: PDM, order: Sequence[int]) -> int:
    """Number of consecutive pairs in ``order`` whose PDM edge points forward."""
    w = pdm.wins()
    order = np.asarray(order)
    return int(w[order[:-1], order[1:]].sum())


def _best_suffix_table(w: np.ndarray) -> np.ndarray:
    """best[S, v]: max weight of a path starting at v that visits exactly the set S.

    Entries with v outside S are -1. Filled one subset size at a time.
    """
    n = w.shape[0]
    full = 1 << n
    best = np.full((full, n), -1, dtype=np.int64)
    masks = np.arange(full)
    popcount = np.array([bin(m).count("1") for m in range(full)])
    for v in range(n):
        best[1 << v, v] = 0
    member = (masks[:, None] >> np.arange(n)[None, :]) & 1
    for size in range(2, n + 1):
        layer = masks[popcount == size]
        for v in range(n):
            S = layer[member[layer, v] == 1]
            rest = S ^ (1 << v)
            cand = best[rest] + w[v][None, :]
            cand[best[rest] < 0] = -1
            best[S, v] = cand.max(axis=1)
    return best


def exact_rank(pdm: PDM) -> RankingResult:
    """Maximum-weight Hamiltonian path over the 0/1 win graph.

    O(n^2 2^n) subset dynamic programming; among optimal paths the
    lexicographically smallest vertex sequence is returned.
    """
    n = pdm.n
    if n > MAX_EXACT_N:
        raise ValueError(f"exact_rank supports n <= {MAX_EXACT_N} (got {n}); use greedy_rank")
    if n == 1:
        return RankingResult.from_order([0])
    w = pdm.wins()
    best = _best_suffix_table(w)
    remaining = (1 << n) - 1
    target = best[remaining].max()
    v = int(np.flatnonzero(best[remaining] == target)[0])
    order = [v]
    while len(order) < n:
        need = best[remaining, v]
        rest = remaining ^ (1 << v)
        for u in range(n):
            if (rest >> u) & 1 and best[rest, u] >= 0 and w[v, u] + best[rest, u] == need:
                break
        order.append(u)
        remaining, v = rest, u
    return RankingResult.from_order(order)


def exact_path_sum(pdm: PDM) -> int:
    if pdm.n == 1:
        return 0
    best = _best_suffix_table(pdm.wins())
    return int(best[(1 << pdm.n) - 1].max())


def brute_force_best(pdm: PDM) -> tuple[int, tuple[int, ...]]:
    """Enumerate all permutations; returns (max path sum, lexicographically first argmax)."""
    w = pdm.wins()
    best, best_perm = -1, None
    for perm in itertools.permutations(range(pdm.n)):
        total = sum(w[perm[k], perm[k + 1]] for k in range(pdm.n - 1))
        if total > best:
            best, best_perm = total, perm
    return best, best_perm


@dataclass(frozen=True)
class ConsistencyReport:
    n: int
    wins: int
    violations: int

    @property
    def transitive(self) -> bool:
        return self.violations == 0


def consistency_check(pdm: PDM) -> ConsistencyReport:
    """Count ordered triples (i, j, k) with i->j and j->k but no i->k edge."""
    w = pdm.wins()
    n = pdm.n
    two_step = w[:, :, None] * w[None, :, :]  # [i, j, k] = w[i,j] * w[j,k]
    distinct = np.ones((n, n, n), dtype=bool)
    idx = np.arange(n)
    distinct[idx, idx, :] = False
    distinct[:, idx, idx] = False
    distinct[idx, :, idx] = False
    missing = (1 - w)[:, None, :]
    violations = int((two_step * missing * distinct).sum())
    return ConsistencyReport(n, int(w.sum()), violations)


def mrr(results: Iterable[tuple[RankingResult, int]]) -> float:
    """Mean reciprocal rank of the gold passage."""
    total, count = 0.0, 0
    for result, gold in results:
        total += 1.0 / int(result.rank[gold])
        count += 1
    if count == 0:
        raise ValueError("mrr of an empty result set is undefined")
    return total / count


def write_rankings(rows: Iterable[tuple[str, RankingResult]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, result in rows:
            fh.write(qid + "\t" + ",".join(str(int(r)) for r in result.rank) + "\n")


def read_rankings(path) -> dict[str, RankingResult]:
    from .corpus import DatasetError

    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                qid, ranks = line.split("\t")
                rank = np.array([int(r) for r in ranks.split(",")], dtype=np.int64)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: expected query_id<TAB>r1,...,rN") from None
            if sorted(rank.tolist()) != list(range(1, len(rank) + 1)):
                raise DatasetError(f"{path}:{lineno}: ranks are not a permutation of 1..{len(rank)}")
            order = np.empty_like(rank)
            order[rank - 1] = np.arange(len(rank))
            out[qid] = RankingResult(rank, order)
    return out
