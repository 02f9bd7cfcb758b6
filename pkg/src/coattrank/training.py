"""Pairwise training loop, objective and binary checkpoints."""

from __future__ import annotations

import logging
import math
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .features import NormStats
from .model import ModelConfig, ModelParams, forward_pair, param_shapes
from .pipeline import PreparedSample, rank_prepared
from .ranking import mrr

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
CKPT_MAGIC = b"COATTRK\x00"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 0.001
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr < 0 or self.clip_norm <= 0:
            raise ValueError(f"invalid training config {self}")


@dataclass(frozen=True)
class TrainingTriple:
    query_index: int
    d1: int
    d2: int
    gold_is_first: bool

    @property
    def gold(self) -> int:
        return self.d1 if self.gold_is_first else self.d2

    @property
    def negative(self) -> int:
        return self.d2 if self.gold_is_first else self.d1


def sample_triple(sample, rng: np.random.Generator, query_index: int = 0) -> TrainingTriple:
    """Gold passage plus one uniformly drawn negative, in random order."""
    gold = sample.gold_index
    if gold is None:
        raise ValueError(f"query {sample.query_id!r} is unlabeled; cannot draw a training triple")
    n = len(sample.passages)
    if n < 2:
        raise ValueError(f"query {sample.query_id!r} has no negative passage")
    neg = int(rng.integers(n - 1))
    if neg >= gold:
        neg += 1
    first = bool(rng.integers(2))
    return TrainingTriple(query_index, gold, neg, True) if first \
        else TrainingTriple(query_index, neg, gold, False)


def loss(p_gold: float) -> float:
    return -math.log(max(p_gold, PROB_FLOOR))


def triple_loss(prepared: PreparedSample, triple: TrainingTriple, params: ModelParams,
                train: bool = False, rng: np.random.Generator | None = None) -> T.Tensor:
    """-ln P(gold | query, d1, d2) as a 1x1 tensor."""
    p1, p2 = forward_pair(prepared.query, prepared.passages[triple.d1],
                          prepared.passages[triple.d2], prepared.features[triple.d1],
                          prepared.features[triple.d2], params, train, rng)
    p_gold = p1 if triple.gold_is_first else p2
    return T.neg(T.log(T.clamp_min(p_gold, PROB_FLOOR)))


# --- checkpoints ----------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    norm: NormStats | None = None
    vocab_hash: str = ""
    meta: dict = field(default_factory=dict)
    version: int = CKPT_VERSION

    def model_params(self) -> ModelParams:
        return ModelParams(self.model_config, OrderedDict(
            (k, T.Tensor(v.copy(), requires_grad=True)) for k, v in self.params.items()))


class CheckpointError(ValueError):
    pass


def _header_text(ckpt: Checkpoint) -> str:
    lines = [f"model.{k}={v!r}" for k, v in ckpt.model_config.to_dict().items()]
    if ckpt.norm is not None:
        lines += [f"norm.mean={','.join(float(x).hex() for x in ckpt.norm.mean)}",
                  f"norm.std={','.join(float(x).hex() for x in ckpt.norm.std)}"]
    lines.append(f"vocab_hash={ckpt.vocab_hash}")
    lines += [f"meta.{k}={v}" for k, v in sorted(ckpt.meta.items())]
    return "\n".join(lines)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = _header_text(ckpt).encode("utf-8")
    out = bytearray(CKPT_MAGIC)
    out += struct.pack("<II", ckpt.version, len(header))
    out += header
    out += struct.pack("<I", len(ckpt.params))
    for name, arr in ckpt.params.items():
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes, expected: ModelConfig | None = None) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise CheckpointError("not a coattrank checkpoint (bad magic)")
    version, header_len = r.unpack("<II")
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CKPT_VERSION})")
    header = {}
    for line in r.take(header_len).decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        header[key] = value
    (count,) = r.unpack("<I")
    params = OrderedDict()
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q")
        size = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    body_end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(data):
        raise CheckpointError(f"checkpoint has {len(data) - r.pos} unexpected trailing bytes")
    if zlib.crc32(data[:body_end]) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupt file)")

    cfg = ModelConfig.from_dict({k[6:]: v for k, v in header.items() if k.startswith("model.")})
    norm = None
    if "norm.mean" in header:
        norm = NormStats(tuple(float.fromhex(x) for x in header["norm.mean"].split(",")),
                         tuple(float.fromhex(x) for x in header["norm.std"].split(",")))
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}

    check_cfg = expected or cfg
    shapes = param_shapes(check_cfg)
    bad = [f"{n}: file {params[n].shape if n in params else 'missing'}, expected {s}"
           for n, s in shapes.items() if n not in params or params[n].shape != s]
    bad += [f"{n}: not part of this model" for n in params if n not in shapes]
    if bad:
        raise CheckpointError("checkpoint parameter shapes do not match config: " + "; ".join(bad))
    return Checkpoint(cfg, params, norm, header.get("vocab_hash", ""), meta, version)


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes(), expected)


# --- training loop ----------------------------------------------------------------

@dataclass
class EpochResult:
    epoch: int
    mean_loss: float
    dev_mrr: float
    checkpoint: Checkpoint
    max_clipped_norm: float = 0.0


def evaluate_mrr(prepared: Sequence[PreparedSample], params: ModelParams, exact: bool = False) -> float:
    return mrr((rank_prepared(p, params, exact=exact), p.gold_index) for p in prepared)


def _snapshot(params: ModelParams, norm, vocab_hash, epoch) -> Checkpoint:
    return Checkpoint(params.cfg, OrderedDict((k, v.copy()) for k, v in params.arrays().items()),
                      norm, vocab_hash, {"epoch": epoch})


def mean_triple_loss(prepared: Sequence[PreparedSample], triples: Sequence[TrainingTriple],
                     params: ModelParams) -> float:
    return float(np.mean([triple_loss(prepared[t.query_index], t, params).item() for t in triples]))


def train(prepared: Sequence[PreparedSample], model_cfg: ModelConfig, train_cfg: TrainConfig,
          dev: Sequence[PreparedSample] = (), norm: NormStats | None = None,
          vocab_hash: str = "", params: ModelParams | None = None,
          report_initial: bool = True) -> Iterator[EpochResult]:
    """Run the epoch loop, yielding a result (with checkpoint) after every epoch.

    With ``report_initial`` (or when ``epochs`` is 0) an epoch-0 result
    carries the loss of the untrained model on the first epoch's triples.
    """
    init_rng = np.random.default_rng([train_cfg.seed, 0])
    rng = np.random.default_rng([train_cfg.seed, 1])
    if params is None:
        params = ModelParams.init(model_cfg, init_rng)
    plist = list(params)
    adam = T.AdamState(lr=train_cfg.lr)
    for sample in prepared:
        if sample.gold_index is None:
            raise ValueError(f"training query {sample.query_id!r} is unlabeled")

    triples = [sample_triple(p, rng, i) for i, p in enumerate(prepared)]
    if report_initial or train_cfg.epochs == 0:
        init_loss = mean_triple_loss(prepared, triples, params)
        dev_score = evaluate_mrr(dev, params) if dev else float("nan")
        yield EpochResult(0, init_loss, dev_score, _snapshot(params, norm, vocab_hash, 0))
    for epoch in range(1, train_cfg.epochs + 1):
        if epoch > 1:
            triples = [sample_triple(p, rng, i) for i, p in enumerate(prepared)]
        order = rng.permutation(len(triples))
        total, max_norm = 0.0, 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [triples[k] for k in order[start:start + train_cfg.batch_size]]
            with T.Tape() as tape:
                losses = [triple_loss(prepared[t.query_index], t, params, True, rng) for t in batch]
                for t, l in zip(batch, losses):
                    if not math.isfinite(l.item()):
                        raise FloatingPointError(
                            f"non-finite loss {l.item()} at epoch {epoch} on query "
                            f"{prepared[t.query_index].query_id!r} (d1={t.d1}, d2={t.d2})")
                batch_loss = T.add_n(losses)
            grads = T.backward(tape, batch_loss, plist)
            grads = T.clip_global_norm(grads, train_cfg.clip_norm)
            max_norm = max(max_norm, T.global_norm(grads))
            T.adam_step(plist, grads, adam)
            total += batch_loss.item()
        mean_loss = total / max(len(triples), 1)
        dev_score = evaluate_mrr(dev, params) if dev else float("nan")
        log.info("epoch %d loss %.6f dev_mrr %.4f", epoch, mean_loss, dev_score)
        yield EpochResult(epoch, mean_loss, dev_score, _snapshot(params, norm, vocab_hash, epoch),
                          max_norm)
