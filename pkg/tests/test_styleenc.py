"""Style encoder tests: attention reweighting contracts, the voiced-only
quantize-and-fill path, and shape discipline across ablation switches."""

import numpy as np
import pytest

from voxstyle.styleenc import (
    ADDITIVE_MASK_VALUE,
    AlignAttention,
    BiasedSelfAttention,
    ConvNeXtBlock,
    EncodeOptions,
    StyleEncoder,
    StyleEncoderConfig,
    extract_voiced,
    key_bias,
)
from voxstyle.tensor import DimensionError, Tensor, softmax_lastdim

rng = np.random.default_rng(11)

TINY = StyleEncoderConfig(
    dim=16,
    mel_bins=12,
    conv_blocks=1,
    uf_blocks=2,
    attention_heads=2,
    rvq_depth=2,
    codebook_size=8,
)


def tiny_inputs(t=6, t_content=5, mel_bins=12, dim=16, seed=0):
    r = np.random.default_rng(seed)
    mel = Tensor(r.normal(size=(t, mel_bins)).astype(np.float32))
    content = Tensor(r.normal(size=(t_content, dim)).astype(np.float32))
    vuv = np.array([True, False, True, True, False, True])[:t]
    return mel, vuv, content


class TestKeyBias:
    def test_plain_passthrough(self):
        assert key_bias(np.array([True, False]), "plain", 0.02) == (None, None)

    def test_biased_factors(self):
        row, how = key_bias(np.array([True, False, True]), "biased", 0.02)
        assert how == "mul"
        np.testing.assert_array_equal(row, [1.0, 0.02, 1.0])

    def test_bm_zeroes_masked_keys_exactly(self):
        row, how = key_bias(np.array([False, True, False]), "bm", 0.02)
        assert how == "mul"
        np.testing.assert_array_equal(row, [0.0, 1.0, 0.0])
        logits = np.array([123.456, -7.8, 1e6])
        np.testing.assert_array_equal(logits * row, [0.0, -7.8, 0.0])

    def test_additive_offsets(self):
        row, how = key_bias(np.array([True, False]), "additive", 0.02)
        assert how == "add"
        np.testing.assert_array_equal(row, [0.0, ADDITIVE_MASK_VALUE])

    def test_unknown_kind(self):
        with pytest.raises(DimensionError, match="kind"):
            key_bias(np.array([True]), "sideways", 0.02)


class TestBiasedSelfAttention:
    def identity_attention(self, dim=2, heads=1):
        attn = BiasedSelfAttention(dim, heads, rng)
        attn.wq.data[:] = np.eye(dim, dtype=np.float32)
        attn.wk.data[:] = np.eye(dim, dtype=np.float32)
        attn.wv.data[:] = np.eye(dim, dtype=np.float32)
        return attn

    def test_two_frame_hand_oracle(self):
        # Identity projections, x = I2, vuv = [voiced, unvoiced].
        # logits = x x^T / sqrt(2); the unvoiced key column is scaled by
        # beta = 0.02; softmax rows then mix v = x and the input is
        # added back:
        #   row 0 weights = softmax([0.70711, 0])       = [0.66976, 0.33024]
        #   row 1 weights = softmax([0, 0.0141421])     = [0.49646, 0.50354]
        attn = self.identity_attention()
        x = Tensor(np.eye(2, dtype=np.float32))
        out = attn.forward(x, np.array([True, False]), "biased", 0.02)
        want = np.array(
            [[1.6697615493, 0.3302384507], [0.4964645250, 1.5035354750]]
        )
        np.testing.assert_allclose(out.data, want, atol=1e-5)

    def test_beta_one_equals_plain(self):
        attn = BiasedSelfAttention(16, 2, rng)
        x = Tensor(rng.normal(size=(7, 16)).astype(np.float32))
        vuv = np.array([True, False, False, True, False, True, True])
        a = attn.forward(x, vuv, "biased", 1.0)
        b = attn.forward(x, vuv, "plain", 0.02)
        assert np.max(np.abs(a.data - b.data)) < 1e-6

    def test_beta_below_one_changes_output(self):
        attn = BiasedSelfAttention(16, 1, rng)
        x = Tensor(rng.normal(size=(6, 16)).astype(np.float32))
        vuv = np.array([True, False, True, False, True, True])
        a = attn.forward(x, vuv, "biased", 0.02)
        b = attn.forward(x, vuv, "plain", 0.02)
        assert np.max(np.abs(a.data - b.data)) > 1e-4

    def test_all_voiced_biased_equals_plain(self):
        attn = BiasedSelfAttention(8, 1, rng)
        x = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
        vuv = np.ones(4, dtype=bool)
        a = attn.forward(x, vuv, "biased", 0.02)
        b = attn.forward(x, vuv, "plain", 0.02)
        np.testing.assert_array_equal(a.data, b.data)

    def test_bm_survives_huge_masked_logits(self):
        # With every key masked, bm zeroes every logit exactly, so each
        # query mixes the values uniformly no matter how large the raw
        # logits were.
        attn = self.identity_attention(dim=2)
        x = Tensor(np.array([[40.0, 0.0], [40.0, 0.0], [0.0, 1.0]], dtype=np.float32))
        out = attn.forward(x, np.zeros(3, dtype=bool), "bm", 0.02)
        assert np.all(np.isfinite(out.data))
        mean_row = x.data.mean(axis=0)
        np.testing.assert_allclose(out.data, x.data + mean_row[None, :], rtol=1e-5)

    def test_additive_mode_excludes_masked_keys(self):
        attn = BiasedSelfAttention(8, 1, rng)
        x = Tensor(rng.normal(size=(5, 8)).astype(np.float32))
        vuv = np.array([True, False, True, False, True])
        out_add = attn.forward(x, vuv, "additive", 0.02).data
        # oracle: plain attention restricted to voiced keys only
        q = x.data @ attn.wq.data
        k = x.data @ attn.wk.data
        v = x.data @ attn.wv.data
        logits = (q @ k.T) / np.sqrt(8.0)
        logits[:, ~vuv] = -np.inf
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(out_add, w @ v + x.data, atol=1e-4)

    def test_softmax_rows_sum_to_one_inside_attention(self):
        for kind in ("biased", "bm", "plain", "additive"):
            x = rng.normal(size=(6, 6))
            row, how = key_bias(np.array([True, False, True, False, True, False]), kind, 0.02)
            logits = x @ x.T
            if how == "mul":
                logits = logits * row[None, :]
            elif how == "add":
                logits = logits + row[None, :]
            w = softmax_lastdim(Tensor(logits)).data
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)

    def test_flag_count_checked(self):
        attn = BiasedSelfAttention(8, 1, rng)
        x = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
        with pytest.raises(DimensionError):
            attn.forward(x, np.array([True, False]), "biased", 0.02)

    def test_multi_head_output_shape(self):
        attn = BiasedSelfAttention(12, 3, rng)
        x = Tensor(rng.normal(size=(5, 12)).astype(np.float32))
        out = attn.forward(x, np.ones(5, dtype=bool), "biased", 0.02)
        assert out.shape == (5, 12)


class TestBlocks:
    def test_convnext_zeroed_projection_is_identity(self):
        block = ConvNeXtBlock(8, 2, rng)
        block.pw_down.data[:] = 0.0
        x = Tensor(rng.normal(size=(9, 8)).astype(np.float32))
        np.testing.assert_array_equal(block.forward(x).data, x.data)

    def test_convnext_preserves_shape(self):
        block = ConvNeXtBlock(16, 2, rng)
        x = Tensor(rng.normal(size=(4, 16)).astype(np.float32))
        assert block.forward(x).shape == (4, 16)

    def test_align_attention_rows_follow_queries(self):
        align = AlignAttention(16, rng)
        content = Tensor(rng.normal(size=(9, 16)).astype(np.float32))
        style = Tensor(rng.normal(size=(4, 16)).astype(np.float32))
        out = align.forward(content, style)
        assert out.shape == (9, 16)

    def test_align_single_key_returns_its_value(self):
        # With one style frame every query must attend to it fully.
        align = AlignAttention(6, rng)
        content = Tensor(rng.normal(size=(3, 6)).astype(np.float32))
        style = Tensor(rng.normal(size=(1, 6)).astype(np.float32))
        out = align.forward(content, style)
        want = np.tile(style.data @ align.wv.data, (3, 1))
        np.testing.assert_allclose(out.data, want, atol=1e-5)


class TestExtractVoiced:
    def test_picks_rows_and_map(self):
        x = Tensor(np.arange(12, dtype=np.float32).reshape(4, 3))
        picked, index_map = extract_voiced(x, np.array([False, True, False, True]))
        np.testing.assert_array_equal(index_map, [1, 3])
        np.testing.assert_array_equal(picked.data, x.data[[1, 3]])

    def test_count_mismatch(self):
        with pytest.raises(DimensionError):
            extract_voiced(Tensor(np.ones((3, 2), dtype=np.float32)), np.array([True]))


class TestStyleEncoder:
    def test_encode_shapes(self):
        enc = StyleEncoder(TINY, np.random.default_rng(1))
        mel, vuv, content = tiny_inputs()
        emb, quant = enc.encode(mel, vuv, content)
        assert emb.aligned.shape == (5, 16)
        assert emb.sequence.shape == (6, 16)
        assert quant.indices.shape == (int(vuv.sum()), 2)
        assert len(quant.residual_norms) == 3

    def test_voiced_only_quantization_row_count(self):
        enc = StyleEncoder(TINY, np.random.default_rng(1))
        mel, vuv, content = tiny_inputs()
        _, q_ve = enc.encode(mel, vuv, content, EncodeOptions(use_ve=True))
        _, q_all = enc.encode(mel, vuv, content, EncodeOptions(use_ve=False))
        assert q_ve.indices.shape[0] == 4
        assert q_all.indices.shape[0] == 6

    def test_mask_embedding_fills_unvoiced_rows(self):
        enc = StyleEncoder(TINY, np.random.default_rng(1))
        mel, vuv, content = tiny_inputs()
        emb, _ = enc.encode(mel, vuv, content, EncodeOptions(use_uf=False))
        unvoiced = ~vuv
        for row in np.flatnonzero(unvoiced):
            np.testing.assert_array_equal(emb.sequence.data[row], enc.mask_embedding.data)

    def test_all_unvoiced_skips_quantizer(self):
        enc = StyleEncoder(TINY, np.random.default_rng(1))
        mel, _, content = tiny_inputs()
        vuv = np.zeros(6, dtype=bool)
        emb, quant = enc.encode(mel, vuv, content, EncodeOptions(use_uf=False))
        assert quant.indices.shape == (0, 2)
        assert float(quant.commitment_loss.data) == 0.0
        np.testing.assert_array_equal(
            emb.sequence.data, np.tile(enc.mask_embedding.data, (6, 1))
        )

    def test_beta_mask_one_encoder_matches_plain(self):
        cfg_one = StyleEncoderConfig(
            dim=16, mel_bins=12, conv_blocks=1, uf_blocks=2,
            attention_heads=2, rvq_depth=2, codebook_size=8, beta_mask=1.0,
        )
        r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
        enc_a, enc_b = StyleEncoder(cfg_one, r1), StyleEncoder(cfg_one, r2)
        mel, vuv, content = tiny_inputs()
        a, _ = enc_a.encode(mel, vuv, content, EncodeOptions(attention="biased"))
        b, _ = enc_b.encode(mel, vuv, content, EncodeOptions(attention="plain"))
        assert np.max(np.abs(a.aligned.data - b.aligned.data)) < 1e-6

    def test_vuv_length_checked(self):
        enc = StyleEncoder(TINY, np.random.default_rng(1))
        mel, _, content = tiny_inputs()
        with pytest.raises(DimensionError):
            enc.encode(mel, np.array([True, False]), content)

    def test_parameter_names_unique_and_complete(self):
        enc = StyleEncoder(TINY, np.random.default_rng(1))
        params = enc.parameters()
        assert len(params) == len(set(params))
        assert "styleenc.mask_embedding" in params
        assert "styleenc.rvq.layer0.codes" in params
        assert "styleenc.align.wq" in params
        for t in params.values():
            assert t.requires_grad

    def test_uneven_heads_rejected(self):
        with pytest.raises(DimensionError):
            StyleEncoderConfig(dim=10, attention_heads=3)
