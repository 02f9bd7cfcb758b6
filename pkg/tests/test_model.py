import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coattrank import tensor as T
from coattrank.gradcheck import check_loss_gradients, random_instance
from coattrank.model import (
    ModelConfig,
    ModelParams,
    coattend,
    document_score,
    encode,
    encode_query,
    forward_pair,
    meta_embed,
    pair_probability,
    param_shapes,
    score_document,
)
from coattrank.training import TrainingTriple, triple_loss

# softmax weights (e, 1, e)/(2e+1) applied to (1,0), (0,1), (1,1); 30-digit arithmetic
META_EXAMPLE = (0.844637596503036393206581411976, 0.577681201748481803396709294012)
SIGMOID_1 = 0.731058578630004879251159241822


def small_cfg(**kw):
    base = dict(embed_dim=6, hidden=4, lstm_layers=1, dropout=0.0, max_query_len=5,
                max_doc_len=7, init_range=0.3)
    base.update(kw)
    return ModelConfig(**base)


def params_for(cfg, seed=0):
    return ModelParams.init(cfg, np.random.default_rng(seed))


class TestConfigAndParams:
    def test_full_scale_defaults(self):
        cfg = ModelConfig()
        assert (cfg.embed_dim, cfg.hidden, cfg.lstm_layers, cfg.dropout) == (300, 500, 2, 0.2)
        assert (cfg.max_query_len, cfg.max_doc_len, cfg.init_range) == (15, 70, 0.01)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ModelConfig(dropout=1.0)
        with pytest.raises(ValueError):
            ModelConfig(hidden=0)

    def test_shapes(self):
        cfg = small_cfg(lstm_layers=2)
        shapes = param_shapes(cfg)
        assert shapes["attn_W"] == (1, 6) and shapes["out_W"] == (1, 2 * 4 + 3)
        assert shapes["enc.l0.fwd.w_in"] == (16, 6) and shapes["enc.l1.bwd.w_in"] == (16, 8)
        assert shapes["fusion.l0.fwd.w_in"] == (16, 24)
        assert shapes["q_sentinel"] == shapes["d_sentinel"] == (8, 1)

    def test_init_range(self):
        params = ModelParams.init(ModelConfig(embed_dim=10, hidden=6), np.random.default_rng(0))
        for t in params:
            assert np.abs(t.data).max() <= 0.01

    def test_wrong_shape_rejected(self):
        cfg = small_cfg()
        tensors = ModelParams.zeros(cfg).tensors
        tensors["out_W"] = T.Tensor(np.zeros((1, 5)), requires_grad=True)
        with pytest.raises(ValueError, match="out_W"):
            ModelParams(cfg, tensors)


class TestMetaEmbed:
    def test_zero_params_mean(self, rng):
        params = ModelParams.zeros(small_cfg())
        vecs = rng.normal(size=(3, 6, 4))
        np.testing.assert_allclose(meta_embed(vecs, params).data, vecs.mean(axis=0), atol=1e-15)

    def test_identical_vectors_fixed_point(self, rng):
        params = params_for(small_cfg(init_range=2.0))
        v = rng.normal(size=(6, 3))
        np.testing.assert_allclose(meta_embed(np.stack([v, v, v]), params).data, v, atol=1e-14)

    def test_hand_example(self):
        cfg = small_cfg(embed_dim=2)
        params = ModelParams.zeros(cfg)
        params["attn_W"].data[:] = [[1.0, 0.0]]
        vecs = np.array([[[1.0], [0.0]], [[0.0], [1.0]], [[1.0], [1.0]]])
        out = meta_embed(vecs, params).data[:, 0]
        np.testing.assert_allclose(out, META_EXAMPLE, atol=1e-12)


class TestEncode:
    def test_shape(self, rng):
        cfg = small_cfg(hidden=4)
        out = encode(T.Tensor(rng.normal(size=(6, 5))), params_for(cfg), "query")
        assert out.shape == (8, 6)

    def test_zero_params(self, rng):
        cfg = small_cfg()
        params = ModelParams.zeros(cfg)
        params["d_sentinel"].data[:] = 7.0
        out = encode(T.Tensor(rng.normal(size=(6, 3))), params, "document").data
        assert not out[:, :3].any() and (out[:, 3] == 7.0).all()

    def test_single_position_by_hand(self):
        cfg = ModelConfig(embed_dim=1, hidden=1, lstm_layers=1, dropout=0.0, init_range=0.1)
        params = ModelParams.zeros(cfg)
        gate_w = np.array([[0.1], [0.2], [0.3], [0.4]])
        gate_b = np.array([[0.01], [-0.02], [0.03], [-0.04]])
        for d in ("fwd", "bwd"):
            params[f"enc.l0.{d}.w_in"].data[:] = gate_w
            params[f"enc.l0.{d}.bias"].data[:] = gate_b
        out = encode(T.Tensor([[0.5]]), params, "query").data

        def sig(x):
            return 1 / (1 + math.exp(-x))

        z = [0.1 * 0.5 + 0.01, 0.2 * 0.5 - 0.02, 0.3 * 0.5 + 0.03, 0.4 * 0.5 - 0.04]
        c = sig(z[0]) * math.tanh(z[2])
        h = sig(z[3]) * math.tanh(c)
        assert out[0, 0] == pytest.approx(h, abs=1e-12) and out[1, 0] == pytest.approx(h, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            encode(T.Tensor(np.zeros((6, 0))), params_for(small_cfg()), "query")


def naive_softmax(col):
    m = max(col)
    e = [math.exp(v - m) for v in col]
    s = sum(e)
    return [v / s for v in e]


def naive_coattention(Q, D):
    """Loop-based affinity, attention and context matrices."""
    rows, n1 = Q.shape
    m1 = D.shape[1]
    L = [[sum(D[k, i] * Q[k, j] for k in range(rows)) for j in range(n1)] for i in range(m1)]
    AQ = np.zeros((m1, n1))
    for j in range(n1):
        AQ[:, j] = naive_softmax([L[i][j] for i in range(m1)])
    AD = np.zeros((n1, m1))
    for i in range(m1):
        AD[:, i] = naive_softmax([L[i][j] for j in range(n1)])
    CQ = np.array([[sum(D[k, i] * AQ[i, j] for i in range(m1)) for j in range(n1)]
                   for k in range(rows)])
    stacked = np.vstack([Q, CQ])
    CD = np.array([[sum(stacked[k, j] * AD[j, i] for j in range(n1)) for i in range(m1)]
                   for k in range(2 * rows)])
    return np.array(L), AQ, AD, CQ, CD


def naive_lstm(X, w_in, w_rec, b, reverse):
    hidden = w_rec.shape[1]
    h, c = [0.0] * hidden, [0.0] * hidden
    out = np.zeros((hidden, X.shape[1]))
    order = range(X.shape[1] - 1, -1, -1) if reverse else range(X.shape[1])
    for t in order:
        z = [b[r, 0] + sum(w_in[r, k] * X[k, t] for k in range(X.shape[0]))
             + sum(w_rec[r, k] * h[k] for k in range(hidden)) for r in range(4 * hidden)]
        sig = lambda v: 1 / (1 + math.exp(-v))
        i = [sig(v) for v in z[:hidden]]
        f = [sig(v) for v in z[hidden:2 * hidden]]
        g = [math.tanh(v) for v in z[2 * hidden:3 * hidden]]
        o = [sig(v) for v in z[3 * hidden:]]
        c = [f[k] * c[k] + i[k] * g[k] for k in range(hidden)]
        h = [o[k] * math.tanh(c[k]) for k in range(hidden)]
        out[:, t] = h
    return out


class TestCoattend:
    def test_shapes(self, rng):
        cfg = small_cfg(hidden=4)
        out = coattend(T.Tensor(rng.normal(size=(8, 4))), T.Tensor(rng.normal(size=(8, 6))),
                       params_for(cfg))
        assert out.L.shape == (6, 4) and out.A_Q.shape == (6, 4)
        assert out.C_Q.shape == (8, 4) and out.C_D.shape == (16, 6)
        assert out.U.shape == (8, 5)

    def test_height_mismatch(self, rng):
        with pytest.raises(ValueError, match="height"):
            coattend(T.Tensor(np.zeros((8, 3))), T.Tensor(np.zeros((6, 3))),
                     params_for(small_cfg()))

    def test_equal_document_columns(self, rng):
        col = rng.normal(size=(8, 1))
        D = T.Tensor(np.repeat(col, 6, axis=1))
        out = coattend(T.Tensor(rng.normal(size=(8, 4))), D, params_for(small_cfg()))
        np.testing.assert_allclose(out.A_Q.data, 1 / 6, atol=1e-15)
        np.testing.assert_allclose(out.C_Q.data, np.repeat(col, 4, axis=1), atol=1e-14)

    def test_naive_oracle(self, rng):
        cfg = small_cfg(hidden=2, init_range=0.5)
        params = params_for(cfg, 3)
        Q, D = rng.normal(size=(4, 3)), rng.normal(size=(4, 4))  # n=2, m=3 plus sentinels
        out = coattend(T.Tensor(Q), T.Tensor(D), params)
        L, AQ, AD, CQ, CD = naive_coattention(Q, D)
        for got, want in [(out.L, L), (out.A_Q, AQ), (out.A_D, AD), (out.C_Q, CQ), (out.C_D, CD)]:
            np.testing.assert_allclose(got.data, want, atol=1e-12)
        fused_in = np.vstack([D, CD])[:, :3]
        p = params.tensors
        U = np.vstack([naive_lstm(fused_in, p[f"fusion.l0.{d}.w_in"].data,
                                  p[f"fusion.l0.{d}.w_rec"].data, p[f"fusion.l0.{d}.bias"].data,
                                  d == "bwd") for d in ("fwd", "bwd")])
        np.testing.assert_allclose(out.U.data, U, atol=1e-12)

    def test_padding_masked_matches_unpadded(self, rng):
        params = params_for(small_cfg(), 5)
        Q, D = rng.normal(size=(8, 4)), rng.normal(size=(8, 5))
        plain = coattend(T.Tensor(Q), T.Tensor(D), params)
        pad = np.zeros((8, 2))
        Qp = np.hstack([Q[:, :3], pad, Q[:, 3:]])
        Dp = np.hstack([D[:, :4], pad, D[:, 4:]])
        qm = np.array([1, 1, 1, 0, 0, 1], bool)
        dm = np.array([1, 1, 1, 1, 0, 0, 1], bool)
        padded = coattend(T.Tensor(Qp), T.Tensor(Dp), params, q_mask=qm, d_mask=dm)
        assert not padded.A_Q.data[~dm].any() and not padded.A_D.data[~qm].any()
        np.testing.assert_allclose(padded.U.data, plain.U.data, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 4), st.integers(0, 1000))
    def test_shape_chain_and_column_sums(self, n, m, h, seed):
        r = np.random.default_rng(seed)
        cfg = small_cfg(hidden=h)
        out = coattend(T.Tensor(r.normal(size=(2 * h, n + 1))),
                       T.Tensor(r.normal(size=(2 * h, m + 1))), params_for(cfg, seed))
        assert out.L.shape == (m + 1, n + 1) and out.A_D.shape == (n + 1, m + 1)
        assert out.C_Q.shape == (2 * h, n + 1) and out.C_D.shape == (4 * h, m + 1)
        assert out.U.shape == (2 * h, m)
        np.testing.assert_allclose(out.A_Q.data.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.A_D.data.sum(axis=0), 1.0, atol=1e-12)


class TestScoreAndPair:
    def test_zero_weights(self, rng):
        params = ModelParams.zeros(small_cfg())
        params["out_b"].data[:] = 0.7
        assert score_document(T.Tensor(rng.normal(size=(8, 4))), rng.normal(size=3), params).item() == 0.7

    def test_single_column(self, rng):
        params = params_for(small_cfg())
        U = rng.normal(size=(8, 1))
        feats = rng.normal(size=3)
        want = params["out_W"].data[0] @ np.concatenate([feats, U[:, 0]]) + params["out_b"].item()
        assert score_document(T.Tensor(U), feats, params).item() == pytest.approx(want, abs=1e-14)

    def test_hand_dot_product(self):
        cfg = small_cfg(hidden=1)  # pooled vector has 2 entries; add a third via features
        params = ModelParams.zeros(cfg)
        params["out_W"].data[:] = [[0.5, -1.0, 2.0, 3.0, -0.25]]
        params["out_b"].data[:] = 0.125
        U = np.array([[1.0, 4.0, -2.0], [0.5, -1.0, 0.25]])  # max-pool -> (4.0, 0.5)
        score = score_document(T.Tensor(U), [2.0, 1.0, -1.0], params).item()
        assert score == 0.5 * 2 - 1.0 * 1 + 2.0 * -1 + 3.0 * 4.0 - 0.25 * 0.5 + 0.125

    def test_pair_probability(self):
        assert pair_probability(0.0, 0.0) == (0.5, 0.5)
        p1, p2 = pair_probability(1.0, 0.0)
        assert p1 == pytest.approx(SIGMOID_1, abs=1e-15) and p2 == pytest.approx(1 - SIGMOID_1, abs=1e-15)
        assert pair_probability(3.5, -1.25) == pair_probability(3.5 + 8.0, -1.25 + 8.0)

    @given(st.floats(-40, 40), st.floats(-40, 40))
    def test_pair_complete_and_swap(self, a, b):
        p1, p2 = pair_probability(a, b)
        assert p1 + p2 == 1.0
        assert pair_probability(b, a) == (p2, p1)


class TestForwardPair:
    def _instance(self, cfg, seed=0):
        r = np.random.default_rng(seed)
        sample = random_instance(cfg, r, n_passages=3)
        return sample, params_for(cfg, seed)

    def test_identical_documents(self):
        sample, params = self._instance(small_cfg())
        p1, p2 = forward_pair(sample.query, sample.passages[0], sample.passages[0],
                              sample.features[0], sample.features[0], params)
        assert (p1.item(), p2.item()) == (0.5, 0.5)

    def test_swap(self):
        sample, params = self._instance(small_cfg(lstm_layers=2, dropout=0.2))
        a = forward_pair(sample.query, sample.passages[0], sample.passages[1],
                         sample.features[0], sample.features[1], params)
        b = forward_pair(sample.query, sample.passages[1], sample.passages[0],
                         sample.features[1], sample.features[0], params)
        assert (a[0].item(), a[1].item()) == (b[1].item(), b[0].item())

    def test_partner_independent_scores(self):
        sample, params = self._instance(small_cfg(lstm_layers=2))
        Q = encode_query(sample.query, params)
        alone = document_score(Q, sample.passages[0], sample.features[0], params).item()
        for partner in (1, 2):
            Q2 = encode_query(sample.query, params)
            document_score(Q2, sample.passages[partner], sample.features[partner], params)
            again = document_score(Q2, sample.passages[0], sample.features[0], params).item()
            assert again == alone

    def test_dropout_zero_train_equals_eval(self):
        sample, params = self._instance(small_cfg(lstm_layers=2, dropout=0.0))
        args = (sample.query, sample.passages[0], sample.passages[1], sample.features[0],
                sample.features[1], params)
        ev = forward_pair(*args)[0].item()
        with T.Tape():
            tr = forward_pair(*args, train=True, rng=np.random.default_rng(0))[0].item()
        assert abs(ev - tr) < 1e-12

    def test_dropout_active_in_train(self):
        sample, params = self._instance(small_cfg(lstm_layers=2, dropout=0.5, init_range=1.0))
        args = (sample.query, sample.passages[0], sample.passages[1], sample.features[0],
                sample.features[1], params)
        ev = forward_pair(*args)[0].item()
        with T.Tape():
            tr = forward_pair(*args, train=True, rng=np.random.default_rng(0))[0].item()
        assert ev != tr

    def test_two_layer_gradients(self):
        cfg = ModelConfig(embed_dim=4, hidden=3, lstm_layers=2, dropout=0.0, max_query_len=3,
                          max_doc_len=4, init_range=0.2)
        r = np.random.default_rng(11)
        params = ModelParams.init(cfg, r)
        sample = random_instance(cfg, r)
        rows = check_loss_gradients(params, lambda p: triple_loss(sample, TrainingTriple(0, 1, 0, False), p))
        assert {row.name for row in rows} == set(params.names())
        assert max(row.max_rel_error for row in rows) < 1e-4
