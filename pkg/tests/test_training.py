import math

import numpy as np
import pytest

from coattrank.corpus import QuerySample
from coattrank.gradcheck import random_instance
from coattrank.model import ModelConfig
from coattrank.training import (
    CheckpointError,
    TrainConfig,
    TrainingTriple,
    checkpoint_bytes,
    load_checkpoint,
    loss,
    mean_triple_loss,
    parse_checkpoint,
    sample_triple,
    save_checkpoint,
    train,
)

TINY = ModelConfig(embed_dim=12, hidden=8, lstm_layers=1, dropout=0.0, max_query_len=4,
                   max_doc_len=6, init_range=0.01)


def labeled(gold=4, n=10):
    return QuerySample("q", ("a",), tuple((f"p{i}",) for i in range(n)), gold)


def random_prepared(cfg, n_queries, seed):
    r = np.random.default_rng(seed)
    out = []
    for k in range(n_queries):
        s = random_instance(cfg, r, n_passages=4)
        s.query_id = f"r{k}"
        s.gold_index = int(r.integers(4))
        out.append(s)
    return out


class TestSampleTriple:
    def test_uniform_negatives_and_order(self):
        rng = np.random.default_rng(0)
        sample = labeled(gold=4)
        draws = [sample_triple(sample, rng) for _ in range(10_000)]
        assert all(t.gold == 4 and t.negative != 4 for t in draws)
        freq = np.bincount([t.negative for t in draws], minlength=10) / len(draws)
        assert freq[4] == 0
        assert np.abs(np.delete(freq, 4) - 1 / 9).max() < 0.02
        assert abs(np.mean([t.gold_is_first for t in draws]) - 0.5) < 0.02

    def test_deterministic(self):
        a = [sample_triple(labeled(), np.random.default_rng(5)) for _ in range(3)]
        b = [sample_triple(labeled(), np.random.default_rng(5)) for _ in range(3)]
        assert a == b

    def test_unlabeled(self):
        with pytest.raises(ValueError, match="unlabeled"):
            sample_triple(QuerySample("q", (), (("a",), ("b",))), np.random.default_rng(0))

    def test_triple_fields(self):
        t = TrainingTriple(0, 3, 5, False)
        assert t.gold == 5 and t.negative == 3


class TestLoss:
    def test_values(self):
        assert loss(1.0) == 0.0
        assert loss(0.5) == pytest.approx(0.693147180559945, abs=1e-12)
        assert loss(math.exp(-1)) == pytest.approx(1.0, abs=1e-15)

    def test_floor(self):
        assert loss(0.0) == pytest.approx(-math.log(1e-12))


class TestTrain:
    def test_lr_zero_keeps_params(self):
        data = random_prepared(TINY, 3, 0)
        results = list(train(data, TINY, TrainConfig(epochs=3, batch_size=2, lr=0.0)))
        first, last = results[0].checkpoint.params, results[-1].checkpoint.params
        for name in first:
            assert first[name].tobytes() == last[name].tobytes()

    def test_memorizes_one_triple(self):
        sample = random_instance(TINY, np.random.default_rng(0), n_passages=2)
        results = list(train([sample], TINY, TrainConfig(epochs=200, batch_size=1, seed=0),
                             report_initial=False))
        losses = [r.mean_loss for r in results]
        assert all(b <= a for a, b in zip(losses[5:], losses[6:]))
        params = results[-1].checkpoint.model_params()
        final = mean_triple_loss([sample], [TrainingTriple(0, 0, 1, True)], params)
        assert final < 0.01

    def test_initial_loss_near_ln2(self):
        data = random_prepared(TINY, 120, 1)
        first = next(train(data, TINY, TrainConfig(epochs=1)))
        assert first.epoch == 0 and abs(first.mean_loss - math.log(2)) < 0.1

    def test_clipping_bound(self):
        cfg = ModelConfig(embed_dim=12, hidden=8, lstm_layers=1, dropout=0.0, init_range=1.0)
        data = random_prepared(cfg, 8, 2)
        for r in train(data, cfg, TrainConfig(epochs=2, batch_size=8, clip_norm=5.0),
                       report_initial=False):
            assert r.max_clipped_norm <= 5.0 * (1 + 1e-12)

    def test_deterministic(self):
        data = random_prepared(TINY, 6, 3)
        cfg = TrainConfig(epochs=2, batch_size=4, seed=9)
        a = [checkpoint_bytes(r.checkpoint) for r in train(data, TINY, cfg)]
        b = [checkpoint_bytes(r.checkpoint) for r in train(data, TINY, cfg)]
        assert a == b

    def test_non_finite_loss_aborts(self):
        data = random_prepared(TINY, 2, 4)
        data[1].features[:] = np.nan
        with pytest.raises(FloatingPointError, match="r1"):
            list(train(data, TINY, TrainConfig(epochs=1, batch_size=2), report_initial=False))

    def test_full_scale_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.clip_norm) == (100, 256, 0.001, 5.0)


class TestCheckpoint:
    def _ckpt(self):
        data = random_prepared(TINY, 2, 5)
        from coattrank.features import NormStats

        norm = NormStats((1.0, 0.1, 1 / 3), (2.0, 0.7, 1e-300))
        return list(train(data, TINY, TrainConfig(epochs=1, batch_size=2), norm=norm,
                          vocab_hash="abc"))[-1].checkpoint

    def test_roundtrip_bit_exact(self, tmp_path):
        ckpt = self._ckpt()
        save_checkpoint(ckpt, tmp_path / "c.bin")
        back = load_checkpoint(tmp_path / "c.bin")
        assert back.model_config == ckpt.model_config and back.norm == ckpt.norm
        assert back.vocab_hash == "abc" and back.meta["epoch"] == "1"
        for name, arr in ckpt.params.items():
            assert back.params[name].tobytes() == arr.tobytes()
        assert checkpoint_bytes(back) == (tmp_path / "c.bin").read_bytes()

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError, match="trailing"):
            parse_checkpoint(checkpoint_bytes(self._ckpt()) + b"\x00\x01")

    def test_truncated(self):
        with pytest.raises(CheckpointError, match="truncated"):
            parse_checkpoint(checkpoint_bytes(self._ckpt())[:-40])

    def test_corrupted_payload(self):
        raw = bytearray(checkpoint_bytes(self._ckpt()))
        raw[-5] ^= 0xFF  # last byte of the final float payload
        with pytest.raises(CheckpointError, match="checksum"):
            parse_checkpoint(bytes(raw))

    def test_version_mismatch(self):
        raw = bytearray(checkpoint_bytes(self._ckpt()))
        raw[8] = 99
        with pytest.raises(CheckpointError, match="version"):
            parse_checkpoint(bytes(raw))

    def test_shape_mismatch_names_parameter(self):
        other = ModelConfig(embed_dim=12, hidden=6, lstm_layers=1, dropout=0.0)
        with pytest.raises(CheckpointError, match="enc.l0.fwd.w_in"):
            parse_checkpoint(checkpoint_bytes(self._ckpt()), expected=other)
