"""Pairwise passage scorer.

Pipeline per (query, document): meta-embedding self-attention over the three
banks, a shared bidirectional LSTM encoder with a sentinel column per side,
query/document co-attention fused by a second bidirectional LSTM, then
max-pooling, the three hand-crafted features and a linear scoring layer.
Two documents are compared through a softmax over their scores.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class ModelConfig:
    embed_dim: int = 300
    hidden: int = 500
    lstm_layers: int = 2
    dropout: float = 0.2
    max_query_len: int = 15
    max_doc_len: int = 70
    feature_count: int = 3
    init_range: float = 0.01

    def __post_init__(self):
        if self.hidden <= 0 or self.embed_dim <= 0 or self.lstm_layers <= 0:
            raise ValueError("embed_dim, hidden and lstm_layers must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_query_len < 1 or self.max_doc_len < 1:
            raise ValueError("sequence capacities must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            kwargs[k] = float(v) if k in ("dropout", "init_range") else int(v)
        return cls(**kwargs)


def _lstm_shapes(prefix: str, n_in: int, hidden: int, layers: int):
    for layer in range(layers):
        width = n_in if layer == 0 else 2 * hidden
        for direction in ("fwd", "bwd"):
            base = f"{prefix}.l{layer}.{direction}"
            yield f"{base}.w_in", (4 * hidden, width)
            yield f"{base}.w_rec", (4 * hidden, hidden)
            yield f"{base}.bias", (4 * hidden, 1)


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, int]]":
    h = cfg.hidden
    shapes = OrderedDict()
    shapes["attn_W"] = (1, cfg.embed_dim)
    shapes["attn_b"] = (1, 1)
    shapes.update(_lstm_shapes("enc", cfg.embed_dim, h, cfg.lstm_layers))
    shapes.update(_lstm_shapes("fusion", 6 * h, h, cfg.lstm_layers))
    shapes["q_sentinel"] = (2 * h, 1)
    shapes["d_sentinel"] = (2 * h, 1)
    shapes["out_W"] = (1, 2 * h + cfg.feature_count)
    shapes["out_b"] = (1, 1)
    return shapes


class ModelParams:
    """Every trainable array of the scorer, addressable by name."""

    def __init__(self, cfg: ModelConfig, tensors: "OrderedDict[str, Tensor]"):
        expected = param_shapes(cfg)
        if list(tensors) != list(expected):
            raise ValueError("parameter names do not match the model config")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"parameter {name}: shape {tensors[name].shape}, "
                                 f"config expects {shape}")
        self.cfg = cfg
        self.tensors = tensors

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        r = cfg.init_range
        return cls(cfg, OrderedDict(
            (name, Tensor(rng.uniform(-r, r, size=shape), requires_grad=True))
            for name, shape in param_shapes(cfg).items()))

    @classmethod
    def zeros(cls, cfg: ModelConfig) -> "ModelParams":
        return cls(cfg, OrderedDict((name, Tensor(np.zeros(shape), requires_grad=True))
                                    for name, shape in param_shapes(cfg).items()))

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.tensors.items())

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.tensors.items()))

    def count(self) -> int:
        return sum(t.data.size for t in self)


# --- layers ------------------------------------------------------------------

def meta_embed(vectors: np.ndarray, params: ModelParams) -> Tensor:
    """Attention-weighted average of the three bank vectors at each position.

    ``vectors`` has shape (3, embed_dim, length). Returns embed_dim x length.
    """
    w, b = params["attn_W"], params["attn_b"]
    banks = [T.constant(vectors[j]) for j in range(vectors.shape[0])]
    logits = T.vconcat([T.add(T.matmul(w, x), b) for x in banks])
    alpha = T.softmax_cols(logits)
    return T.add_n([T.mul(x, T.slice_(alpha, rows=slice(j, j + 1)))
                    for j, x in enumerate(banks)])


def bilstm(x: Tensor, params: ModelParams, prefix: str, layers: int, dropout: float,
           rng: np.random.Generator | None, train: bool) -> Tensor:
    """Stacked bidirectional LSTM; returns 2*hidden x length."""
    out = x
    for layer in range(layers):
        if layer > 0:
            out = T.dropout(out, dropout, rng, train)
        base = f"{prefix}.l{layer}"
        fwd = T.lstm(out, params[f"{base}.fwd.w_in"], params[f"{base}.fwd.w_rec"],
                     params[f"{base}.fwd.bias"])
        bwd = T.lstm(out, params[f"{base}.bwd.w_in"], params[f"{base}.bwd.w_rec"],
                     params[f"{base}.bwd.bias"], reverse=True)
        out = T.vconcat([fwd, bwd])
    return out


def encode(meta: Tensor, params: ModelParams, side: str, train: bool = False,
           rng: np.random.Generator | None = None) -> Tensor:
    """Shared encoder over the real positions plus the side's sentinel column."""
    if meta.shape[1] == 0:
        raise ValueError("cannot encode an empty sequence")
    if side not in ("query", "document"):
        raise ValueError(f"side must be 'query' or 'document', got {side!r}")
    cfg = params.cfg
    hidden = bilstm(meta, params, "enc", cfg.lstm_layers, cfg.dropout, rng, train)
    sentinel = params["q_sentinel" if side == "query" else "d_sentinel"]
    return T.hconcat([hidden, sentinel])


@dataclass
class CoattentionOutput:
    U: Tensor
    A_Q: Tensor
    A_D: Tensor
    L: Tensor | None = None
    C_Q: Tensor | None = None
    C_D: Tensor | None = None


def coattend(Q: Tensor, D: Tensor, params: ModelParams, train: bool = False,
             rng: np.random.Generator | None = None,
             q_mask: np.ndarray | None = None, d_mask: np.ndarray | None = None
             ) -> CoattentionOutput:
    """Co-attention between an encoded query and document, sentinels last.

    Optional boolean masks (one entry per column, True for real positions
    and sentinels) exclude padding from both softmaxes; masked document
    columns are dropped before fusion.
    """
    if Q.shape[0] != D.shape[0]:
        raise ValueError(f"query encoding height {Q.shape[0]} != document height {D.shape[0]}")
    n1, m1 = Q.shape[1], D.shape[1]
    q_mask = np.ones(n1, dtype=bool) if q_mask is None else np.asarray(q_mask, dtype=bool)
    d_mask = np.ones(m1, dtype=bool) if d_mask is None else np.asarray(d_mask, dtype=bool)
    affinity = T.matmul(T.transpose(D), Q)
    # each query column: distribution over document positions (and vice versa)
    a_q = T.softmax_cols(affinity, np.broadcast_to(d_mask[:, None], (m1, n1)))
    a_d = T.softmax_cols(T.transpose(affinity), np.broadcast_to(q_mask[:, None], (n1, m1)))
    c_q = T.matmul(D, a_q)
    c_d = T.matmul(T.vconcat([Q, c_q]), a_d)
    fused_in = T.vconcat([D, c_d])
    real = np.flatnonzero(d_mask[:-1])
    if len(real) == m1 - 1:
        fused_in = T.slice_(fused_in, cols=slice(0, m1 - 1))
    else:
        fused_in = T.hconcat([T.slice_(fused_in, cols=slice(i, i + 1)) for i in real])
    cfg = params.cfg
    U = bilstm(fused_in, params, "fusion", cfg.lstm_layers, cfg.dropout, rng, train)
    return CoattentionOutput(U, a_q, a_d, affinity, c_q, c_d)


def score_document(U: Tensor, feats, params: ModelParams) -> Tensor:
    """Linear score of [features ; max-pooled U]; returns a 1x1 tensor."""
    pooled = T.max_cols(U)
    feats = np.asarray(feats.as_array() if hasattr(feats, "as_array") else feats,
                       dtype=np.float64).reshape(-1, 1)
    extended = T.vconcat([T.constant(feats), pooled])
    return T.add(T.matmul(params["out_W"], extended), params["out_b"])


def pair_probability(score1: float, score2: float) -> tuple[float, float]:
    """Softmax over two scores; p1 + p2 == 1 and swapping inputs swaps outputs, exactly."""
    d = np.float64(score1) - np.float64(score2)
    return float(T.sigmoid_array(d)), float(T.sigmoid_array(-d))


# --- composition --------------------------------------------------------------

def encode_query(qvecs: np.ndarray, params: ModelParams, train=False, rng=None) -> Tensor:
    return encode(meta_embed(qvecs, params), params, "query", train, rng)


def document_score(Q: Tensor, dvecs: np.ndarray, feats, params: ModelParams,
                   train=False, rng=None) -> Tensor:
    D = encode(meta_embed(dvecs, params), params, "document", train, rng)
    return score_document(coattend(Q, D, params, train, rng).U, feats, params)


def forward_pair(qvecs: np.ndarray, d1vecs: np.ndarray, d2vecs: np.ndarray, feats1, feats2,
                 params: ModelParams, train: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Probabilities (p1, p2) that each document holds the answer.

    The vector arguments are (3, embed_dim, length) bank lookups.
    """
    Q = encode_query(qvecs, params, train, rng)
    s1 = document_score(Q, d1vecs, feats1, params, train, rng)
    s2 = document_score(Q, d2vecs, feats2, params, train, rng)
    return T.sigmoid(T.sub(s1, s2)), T.sigmoid(T.sub(s2, s1))


def score_passages(qvecs: np.ndarray, passage_vecs, feats, params: ModelParams) -> np.ndarray:
    """Eval-mode scores of every passage for one query (query encoded once)."""
    Q = encode_query(qvecs, params)
    return np.array([document_score(Q, dv, f, params).item()
                     for dv, f in zip(passage_vecs, feats)])
