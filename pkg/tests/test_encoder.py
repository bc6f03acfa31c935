import math

import mpmath
import numpy as np
import pytest

from smartintent.encoder import (
    EncoderConfig,
    EncoderError,
    EncoderParams,
    PretrainConfig,
    encode_sequence,
    init_encoder_params,
    mask_tokens,
    mean_pool,
    mlm_loss,
    mlm_loss_and_grads,
    pretrain,
)
from smartintent.tokenizer import CLS_ID, MASK_ID, SEP_ID, TokenSequence


def _seq(*content: int) -> TokenSequence:
    return TokenSequence((CLS_ID, *content, SEP_ID))


def _zero_params(config: EncoderConfig) -> EncoderParams:
    params = init_encoder_params(config, seed=0)
    for name in params.tensors:
        params.tensors[name][:] = 0.0
    return params


def rel_err(a: float, n: float, floor: float = 1e-6) -> float:
    # Guarded relative error: the floor absorbs finite-difference roundoff
    # on gradients too small for central differences to resolve.
    return abs(a - n) / max(abs(a), abs(n), floor)


class TestMaskTokens:
    def test_fifteen_of_hundred(self):
        seq = TokenSequence((CLS_ID,) + tuple([5] * 100) + (SEP_ID,))
        masked, positions, targets = mask_tokens(seq, 0.15, seed=0)
        assert len(positions) == 15
        assert targets == (5,) * 15
        assert all(masked.ids[p] == MASK_ID for p in positions)

    def test_single_content_token_floor(self):
        seq = _seq(9)
        masked, positions, targets = mask_tokens(seq, 0.15, seed=0)
        assert positions == (1,)
        assert targets == (9,)
        assert masked.ids == (CLS_ID, MASK_ID, SEP_ID)

    def test_same_seed_same_mask(self):
        seq = TokenSequence((CLS_ID,) + tuple(range(5, 45)) + (SEP_ID,))
        a = mask_tokens(seq, 0.15, seed=123)
        b = mask_tokens(seq, 0.15, seed=123)
        assert a == b

    def test_specials_never_masked(self):
        seq = TokenSequence((CLS_ID,) + tuple([7] * 30) + (SEP_ID,))
        for seed in range(200):
            _, positions, _ = mask_tokens(seq, 0.3, seed=seed)
            assert 0 not in positions
            assert len(seq) - 1 not in positions

    def test_count_formula_all_lengths(self):
        for content in range(1, 60):
            seq = TokenSequence((CLS_ID,) + tuple([6] * content) + (SEP_ID,))
            _, positions, _ = mask_tokens(seq, 0.15, seed=1)
            assert len(positions) == max(1, math.floor(0.15 * content + 0.5))

    def test_nothing_maskable(self):
        with pytest.raises(EncoderError):
            mask_tokens(_seq()[0] if False else TokenSequence((CLS_ID, SEP_ID)), 0.15, seed=0)

    def test_rate_validated(self):
        with pytest.raises(EncoderError):
            mask_tokens(_seq(5), rate=0.0, seed=0)
        with pytest.raises(EncoderError):
            mask_tokens(_seq(5), rate=1.0, seed=0)


class TestEncodeSequence:
    def test_zero_params_zero_output(self):
        config = EncoderConfig(vocab_size=12, layers=2, dim=4, heads=2, max_len=8)
        params = _zero_params(config)
        hidden = encode_sequence(params, _seq(5, 6, 7))
        np.testing.assert_array_equal(hidden, np.zeros((5, 4)))

    def test_token_permutation_permutes_rows_without_positions(self):
        config = EncoderConfig(vocab_size=16, layers=1, dim=8, heads=2, max_len=8)
        params = init_encoder_params(config, seed=4)
        params.tensors["pos_emb"][:] = 0.0
        a = encode_sequence(params, _seq(5, 9, 11))
        b = encode_sequence(params, _seq(9, 5, 11))
        np.testing.assert_allclose(a[1], b[2], atol=1e-12)
        np.testing.assert_allclose(a[2], b[1], atol=1e-12)
        np.testing.assert_allclose(a[0], b[0], atol=1e-12)

    def test_tiny_forward_matches_straightline_oracle(self):
        # One layer, one head, d=2, ffn_mult=1, T=2: every intermediate is
        # recomputed below with scalar arithmetic only.
        config = EncoderConfig(vocab_size=6, layers=1, dim=2, heads=1, ffn_mult=1, max_len=4)
        params = _zero_params(config)
        t = params.tensors
        t["tok_emb"][CLS_ID] = [0.10, 0.20]
        t["tok_emb"][SEP_ID] = [0.30, -0.10]
        t["pos_emb"][0] = [0.05, -0.02]
        t["pos_emb"][1] = [-0.03, 0.04]
        t["layers.0.ln1.g"][:] = [1.0, 1.0]
        t["layers.0.ln2.g"][:] = [1.0, 1.0]
        t["final_ln.g"][:] = [1.0, 1.0]
        t["layers.0.attn.wq"][:] = [[0.20, -0.10], [0.05, 0.30]]
        t["layers.0.attn.wk"][:] = [[0.10, 0.40], [-0.20, 0.10]]
        t["layers.0.attn.wv"][:] = [[0.30, 0.10], [0.20, -0.30]]
        t["layers.0.attn.wo"][:] = [[0.10, 0.20], [-0.10, 0.30]]
        t["layers.0.ffn.w1"][:] = [[0.50, -0.20], [0.10, 0.40]]
        t["layers.0.ffn.w2"][:] = [[0.20, 0.10], [-0.30, 0.50]]
        t["layers.0.ffn.b1"][:] = [0.01, -0.02]
        t["layers.0.ffn.b2"][:] = [0.03, 0.00]

        def ln(vec):
            mu = (vec[0] + vec[1]) / 2.0
            var = ((vec[0] - mu) ** 2 + (vec[1] - mu) ** 2) / 2.0
            inv = 1.0 / math.sqrt(var + 1e-5)
            return [(vec[0] - mu) * inv, (vec[1] - mu) * inv]

        def matvec(m, vec):
            return [m[0][0] * vec[0] + m[1][0] * vec[1], m[0][1] * vec[0] + m[1][1] * vec[1]]

        def gelu(x):
            return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))

        x0 = [0.10 + 0.05, 0.20 - 0.02]
        x1 = [0.30 - 0.03, -0.10 + 0.04]
        a0, a1 = ln(x0), ln(x1)
        wq = [[0.20, -0.10], [0.05, 0.30]]
        wk = [[0.10, 0.40], [-0.20, 0.10]]
        wv = [[0.30, 0.10], [0.20, -0.30]]
        wo = [[0.10, 0.20], [-0.10, 0.30]]
        q = [matvec(wq, a0), matvec(wq, a1)]
        k = [matvec(wk, a0), matvec(wk, a1)]
        v = [matvec(wv, a0), matvec(wv, a1)]
        scale = 1.0 / math.sqrt(2.0)
        expected_rows = []
        for r in range(2):
            s0 = (q[r][0] * k[0][0] + q[r][1] * k[0][1]) * scale
            s1 = (q[r][0] * k[1][0] + q[r][1] * k[1][1]) * scale
            m = max(s0, s1)
            e0, e1 = math.exp(s0 - m), math.exp(s1 - m)
            p0, p1 = e0 / (e0 + e1), e1 / (e0 + e1)
            attn = [p0 * v[0][0] + p1 * v[1][0], p0 * v[0][1] + p1 * v[1][1]]
            proj = matvec(wo, attn)
            x_mid = [[x0, x1][r][0] + proj[0], [x0, x1][r][1] + proj[1]]
            b_in = ln(x_mid)
            w1 = [[0.50, -0.20], [0.10, 0.40]]
            w2 = [[0.20, 0.10], [-0.30, 0.50]]
            pre = [matvec(w1, b_in)[0] + 0.01, matvec(w1, b_in)[1] - 0.02]
            act = [gelu(pre[0]), gelu(pre[1])]
            f2 = matvec(w2, act)
            x_out = [x_mid[0] + f2[0] + 0.03, x_mid[1] + f2[1] + 0.00]
            expected_rows.append(ln(x_out))

        hidden = encode_sequence(params, TokenSequence((CLS_ID, SEP_ID)))
        np.testing.assert_allclose(hidden, expected_rows, rtol=1e-12, atol=1e-12)

    def test_rejects_out_of_vocab_and_overlength(self):
        config = EncoderConfig(vocab_size=8, layers=1, dim=4, heads=2, max_len=4)
        params = init_encoder_params(config, seed=0)
        with pytest.raises(EncoderError):
            encode_sequence(params, _seq(9))
        with pytest.raises(EncoderError):
            encode_sequence(params, _seq(5, 5, 5))


class TestMlmLoss:
    def test_uniform_logits_give_ln_v(self):
        config = EncoderConfig(vocab_size=32, layers=1, dim=4, heads=2, max_len=8)
        params = _zero_params(config)
        seq = _seq(5, 6, 7)
        masked, positions, targets = mask_tokens(seq, 0.5, seed=0)
        loss = mlm_loss(params, masked, positions, targets)
        assert loss == pytest.approx(math.log(32), abs=1e-12)

    def test_saturated_target_logit_drives_loss_to_zero(self):
        config = EncoderConfig(vocab_size=8, layers=1, dim=4, heads=2, max_len=8)
        params = _zero_params(config)
        params.tensors["head.b"][5] = 50.0
        loss = mlm_loss(params, _seq(MASK_ID), (1,), (5,))
        assert loss < 1e-15

    def test_fixed_logits_match_mpmath_oracle(self):
        # Zero encoder output makes the head bias the exact logit vector.
        config = EncoderConfig(vocab_size=6, layers=1, dim=4, heads=2, max_len=8)
        params = _zero_params(config)
        logits = [0.7, -1.2, 0.3, 2.0, -0.5, 0.1]
        params.tensors["head.b"][:] = logits
        masked = TokenSequence((CLS_ID, MASK_ID, MASK_ID, SEP_ID))
        targets = (3, 1)
        with mpmath.workdps(60):
            z = sum(mpmath.e**mpmath.mpf(str(v)) for v in logits)
            expected = -(
                mpmath.log(mpmath.e**mpmath.mpf(str(logits[3])) / z)
                + mpmath.log(mpmath.e**mpmath.mpf(str(logits[1])) / z)
            ) / 2
        loss = mlm_loss(params, masked, (1, 2), targets)
        assert loss == pytest.approx(float(expected), rel=1e-13)

    def test_empty_mask_rejected(self):
        config = EncoderConfig(vocab_size=8, layers=1, dim=4, heads=2, max_len=8)
        params = init_encoder_params(config, seed=0)
        with pytest.raises(EncoderError):
            mlm_loss(params, _seq(5), (), ())


class TestMeanPool:
    def test_single_row_identity(self):
        row = np.array([[1.5, -2.0, 0.25]])
        np.testing.assert_array_equal(mean_pool(row), row[0])

    def test_opposite_rows_cancel(self):
        r = np.array([0.3, -0.7, 1.1])
        np.testing.assert_allclose(mean_pool(np.stack([r, -r])), np.zeros(3), atol=1e-16)

    def test_three_row_mean(self):
        rows = np.array([[1.0, 2.0], [3.0, 5.0], [5.0, 11.0]])
        np.testing.assert_allclose(mean_pool(rows), [3.0, 6.0])

    def test_permutation_invariant_and_linear(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        np.testing.assert_allclose(mean_pool(h), mean_pool(h[perm]), atol=1e-15)
        np.testing.assert_allclose(mean_pool(2.5 * h), 2.5 * mean_pool(h), atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(EncoderError):
            mean_pool(np.zeros((0, 4)))


class TestGradients:
    def test_analytic_matches_central_differences(self):
        rng = np.random.default_rng(42)
        config = EncoderConfig(vocab_size=16, layers=1, dim=8, heads=2, max_len=16)
        params = init_encoder_params(config, seed=3)
        content = tuple(rng.integers(5, 16, size=8).tolist())
        seq = TokenSequence((CLS_ID, *content, SEP_ID))
        masked, positions, targets = mask_tokens(seq, 0.3, seed=7)
        _, grads = mlm_loss_and_grads(params, masked, positions, targets)

        step = 1e-5
        checked = 0
        for name in sorted(params.tensors):
            tensor = params.tensors[name]
            for _ in range(2):
                idx = tuple(rng.integers(0, s) for s in tensor.shape)
                orig = tensor[idx]
                tensor[idx] = orig + step
                up = mlm_loss(params, masked, positions, targets)
                tensor[idx] = orig - step
                down = mlm_loss(params, masked, positions, targets)
                tensor[idx] = orig
                numeric = (up - down) / (2 * step)
                assert rel_err(grads[name][idx], numeric) < 1e-4, name
                checked += 1
        assert checked >= 20


class TestPretrain:
    def test_memorizes_single_sequence(self):
        config = EncoderConfig(vocab_size=24, layers=1, dim=16, heads=2, max_len=16)
        params = init_encoder_params(config, seed=0)
        seq = TokenSequence((CLS_ID, 5, 9, 13, 7, 5, 9, SEP_ID))
        _, trace = pretrain(
            params, [seq], PretrainConfig(epochs=400, batch_size=1, lr=1e-3, seed=2)
        )
        assert trace[-1] < 0.1 * math.log(24)

    def test_lr_zero_is_noop(self):
        config = EncoderConfig(vocab_size=16, layers=1, dim=8, heads=2, max_len=16)
        params = init_encoder_params(config, seed=1)
        before = {k: v.copy() for k, v in params.tensors.items()}
        # One content token forces the same mask every step, so with lr=0 the
        # trace is exactly flat; fresh masking makes longer sequences jitter.
        trained, trace = pretrain(
            params, [_seq(9)], PretrainConfig(epochs=5, batch_size=1, lr=0.0, seed=3)
        )
        for name in before:
            np.testing.assert_array_equal(trained.tensors[name], before[name])
        assert max(trace) == min(trace)

    def test_lr_zero_no_drift_with_fresh_masks(self):
        config = EncoderConfig(vocab_size=16, layers=1, dim=8, heads=2, max_len=16)
        params = init_encoder_params(config, seed=1)
        before = {k: v.copy() for k, v in params.tensors.items()}
        trained, trace = pretrain(
            params, [_seq(5, 6, 7, 8)], PretrainConfig(epochs=20, batch_size=2, lr=0.0, seed=3)
        )
        for name in before:
            np.testing.assert_array_equal(trained.tensors[name], before[name])
        assert max(trace) - min(trace) < 0.02 * trace[0]

    def test_initial_loss_near_ln_v(self):
        config = EncoderConfig(vocab_size=64, layers=2, dim=32, heads=2, max_len=32)
        params = init_encoder_params(config, seed=5)
        seqs = [_seq(*([5 + i] * 6)) for i in range(8)]
        _, trace = pretrain(params, seqs, PretrainConfig(epochs=1, batch_size=8, lr=1e-3, seed=6))
        assert abs(trace[0] - math.log(64)) < 0.05 * math.log(64)

    def test_deterministic(self):
        config = EncoderConfig(vocab_size=16, layers=1, dim=8, heads=2, max_len=16)
        seqs = [_seq(5, 6, 7), _seq(8, 9, 10, 11)]
        out = []
        for _ in range(2):
            params = init_encoder_params(config, seed=1)
            trained, trace = pretrain(
                params, seqs, PretrainConfig(epochs=3, batch_size=2, lr=1e-3, seed=9)
            )
            out.append((trained, tuple(trace)))
        assert out[0][1] == out[1][1]
        for name in out[0][0].tensors:
            np.testing.assert_array_equal(out[0][0].tensors[name], out[1][0].tensors[name])

    def test_unmaskable_corpus_rejected(self):
        config = EncoderConfig(vocab_size=16, layers=1, dim=8, heads=2, max_len=16)
        params = init_encoder_params(config, seed=1)
        empty = TokenSequence((CLS_ID, SEP_ID))
        with pytest.raises(EncoderError):
            pretrain(params, [empty], PretrainConfig(epochs=1, batch_size=1, lr=1e-3, seed=0))


def test_config_validation():
    with pytest.raises(EncoderError):
        EncoderConfig(vocab_size=16, layers=0)
    with pytest.raises(EncoderError):
        EncoderConfig(vocab_size=16, dim=10, heads=4)
    with pytest.raises(EncoderError):
        EncoderConfig(vocab_size=16, max_len=1000)
