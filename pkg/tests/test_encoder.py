"""Encoder primitives against naive oracles, variant semantics, checkpoints."""

import numpy as np
import pytest

import lvtomo as lv
from lvtomo.encoder import (
    BnParams,
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    conv_weight_bound,
    init_encoder,
    leaky_relu,
    leaky_relu_backward,
)
from lvtomo.errors import FormatError, ParameterError, ShapeError


def conv1d_oracle(w, x, b=None):
    """Direct O(C_in * C_out * 3 * N) summation with zero padding."""
    B, c_in, n = x.shape
    c_out = w.shape[0]
    y = np.zeros((B, c_out, n))
    for bi in range(B):
        for o in range(c_out):
            for pos in range(n):
                acc = 0.0
                for t in range(3):
                    src = pos + t - 1
                    if 0 <= src < n:
                        acc += float(w[o, :, t] @ x[bi, :, src])
                y[bi, o, pos] = acc + (b[o] if b is not None else 0.0)
    return y


class TestConv1d:
    def test_identity_kernel(self):
        w = np.zeros((6, 6, 3))
        for c in range(6):
            w[c, c, 1] = 1.0
        x = np.random.default_rng(0).normal(size=(2, 6, 9))
        y, _ = conv1d_forward(w, x)
        np.testing.assert_allclose(y, x, atol=1e-15)

    def test_zero_input_no_bias(self):
        w = np.random.default_rng(1).normal(size=(4, 6, 3))
        y, _ = conv1d_forward(w, np.zeros((3, 6, 5)))
        assert np.all(y == 0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(4, 6, 3))
        b = rng.normal(size=4)
        x = rng.normal(size=(2, 6, 5))
        y, _ = conv1d_forward(w, x, b)
        np.testing.assert_allclose(y, conv1d_oracle(w, x, b), atol=1e-12)

    def test_matches_oracle_wide_to_narrow(self):
        # narrow output triggers the tap-grouped GEMM path
        rng = np.random.default_rng(3)
        w = rng.normal(size=(1, 32, 3))
        x = rng.normal(size=(2, 32, 7))
        y, _ = conv1d_forward(w, x)
        np.testing.assert_allclose(y, conv1d_oracle(w, x), atol=1e-12)

    def test_shape_errors(self):
        w = np.zeros((4, 6, 3))
        with pytest.raises(ShapeError):
            conv1d_forward(w, np.zeros((2, 5, 9)))
        with pytest.raises(ShapeError):
            conv1d_forward(w, np.zeros((2, 6, 0)))

    @pytest.mark.parametrize("c_in,c_out", [(6, 4), (5, 1), (2, 3)])
    def test_backward_matches_fd(self, c_in, c_out):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(c_out, c_in, 3))
        b = rng.normal(size=c_out)
        x = rng.normal(size=(2, c_in, 6))
        gy = rng.normal(size=(2, c_out, 6))

        y, cache = conv1d_forward(w, x, b)
        dx, dw, db = conv1d_backward(w, cache, gy)

        def loss(w_, x_, b_):
            y_, _ = conv1d_forward(w_, x_, b_)
            return float((y_ * gy).sum())

        h = 1e-6
        for arr, grad in ((w, dw), (x, dx), (b, db)):
            for _ in range(10):
                i = rng.integers(0, arr.size)
                ap = arr.copy(); ap.flat[i] += h
                am = arr.copy(); am.flat[i] -= h
                args_p = [ap if a is arr else a for a in (w, x, b)]
                args_m = [am if a is arr else a for a in (w, x, b)]
                fd = (loss(*args_p) - loss(*args_m)) / (2 * h)
                assert grad.flat[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


class TestLeakyAndBn:
    def test_leaky_values(self):
        assert leaky_relu(np.array([0.0]))[0] == 0.0
        assert leaky_relu(np.array([-1.0]), 0.01)[0] == pytest.approx(-0.01)
        assert leaky_relu(np.array([2.5]))[0] == 2.5

    def test_leaky_backward(self):
        x = np.array([-1.0, 0.0, 2.0])
        dy = np.ones(3)
        np.testing.assert_allclose(
            leaky_relu_backward(x, dy, 0.01), [0.01, 1.0, 1.0]
        )

    def test_bn_normalizes_batch(self):
        rng = np.random.default_rng(5)
        bn = BnParams(np.ones(4), np.zeros(4), np.zeros(4), np.ones(4))
        x = rng.normal(3.0, 2.0, size=(8, 4, 10))
        y, _ = batchnorm_forward(bn, x, eps=1e-5, momentum=0.1, training=True)
        np.testing.assert_allclose(y.mean(axis=(0, 2)), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.var(axis=(0, 2)), 1.0, atol=1e-3)

    def test_bn_constant_input_is_zero(self):
        bn = BnParams(np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
        x = np.full((4, 2, 3), 7.0)
        y, _ = batchnorm_forward(bn, x, eps=1e-5, momentum=0.1, training=True)
        np.testing.assert_allclose(y, 0.0, atol=1e-9)

    def test_bn_empty_batch_rejected(self):
        bn = BnParams(np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
        with pytest.raises(ParameterError):
            batchnorm_forward(bn, np.zeros((0, 2, 3)), 1e-5, 0.1, True)

    def test_bn_eval_uses_running_stats(self):
        bn = BnParams(np.ones(1), np.zeros(1), np.array([2.0]), np.array([4.0]))
        x = np.full((1, 1, 3), 4.0)
        y, cache = batchnorm_forward(bn, x, eps=0.0, momentum=0.1, training=False)
        assert cache is None
        np.testing.assert_allclose(y, 1.0)  # (4-2)/sqrt(4)

    def test_bn_backward_matches_fd(self):
        rng = np.random.default_rng(6)
        x = rng.normal(1.0, 1.5, size=(3, 2, 4))
        gy = rng.normal(size=(3, 2, 4))
        gamma = rng.normal(1.0, 0.2, size=2)
        beta = rng.normal(size=2)

        def loss(x_, gamma_, beta_):
            bn_ = BnParams(gamma_.copy(), beta_.copy(), np.zeros(2), np.ones(2))
            y_, _ = batchnorm_forward(bn_, x_, 1e-5, 0.1, True)
            return float((y_ * gy).sum())

        bn = BnParams(gamma.copy(), beta.copy(), np.zeros(2), np.ones(2))
        y, cache = batchnorm_forward(bn, x, 1e-5, 0.1, True)
        dx, dgamma, dbeta = batchnorm_backward(bn, cache, gy)
        h = 1e-6
        for arr, grad, name in ((x, dx, "x"), (gamma, dgamma, "g"), (beta, dbeta, "b")):
            for _ in range(8):
                i = rng.integers(0, arr.size)
                ap = arr.copy(); ap.flat[i] += h
                am = arr.copy(); am.flat[i] -= h
                args_p = [ap if a is arr else a for a in (x, gamma, beta)]
                args_m = [am if a is arr else a for a in (x, gamma, beta)]
                fd = (loss(*args_p) - loss(*args_m)) / (2 * h)
                assert grad.flat[i] == pytest.approx(fd, rel=1e-5, abs=1e-8), name


class TestEncoderVariants:
    def _inputs(self, rng, B=5, N=9):
        feats = rng.uniform(-1, 1, size=(B, 6, N))
        n = rng.integers(2, N + 1, size=B)
        for b in range(B):
            feats[b, :, n[b]:] = 0.0
        return feats, n

    def test_weights_nonnegative(self):
        rng = np.random.default_rng(7)
        feats, n = self._inputs(rng)
        for variant in ("no_bias", "bias_mask", "no_bias_bn"):
            params = init_encoder(np.random.default_rng(1), variant)
            w, _ = lv.encoder_forward(params, feats, n)
            assert np.all(w >= 0)

    def test_no_bias_zero_padding_gives_zero_weights(self):
        rng = np.random.default_rng(8)
        feats, n = self._inputs(rng, B=4, N=12)
        params = init_encoder(np.random.default_rng(2), "no_bias")
        w, _ = lv.encoder_forward(params, feats, n)
        for b in range(4):
            # interior padded positions, clear of the conv's 2-column reach
            start = n[b] + 2
            assert np.all(w[b, start:] == 0)

    def test_bias_mask_exact_zero_beyond_n(self):
        rng = np.random.default_rng(9)
        feats, n = self._inputs(rng)
        params = init_encoder(np.random.default_rng(3), "bias_mask")
        w, _ = lv.encoder_forward(params, feats, n)
        for b in range(len(n)):
            assert np.all(w[b, n[b]:] == 0)
            assert np.any(w[b, : n[b]] > 0)

    def test_bias_mask_padding_perturbation_inert(self):
        rng = np.random.default_rng(10)
        feats, n = self._inputs(rng, B=3, N=10)
        params = init_encoder(np.random.default_rng(4), "bias_mask")
        voxels = rng.uniform(0, 1, 64)
        idx = rng.integers(0, 64, size=(3, 10))
        for b in range(3):
            idx[b, n[b]:] = -1
        w1, _ = lv.encoder_forward(params, feats, n)
        p1 = lv.predict_pixel(w1, lv.voxel_pool(voxels, idx))
        feats2 = feats.copy()
        for b in range(3):
            feats2[b, :, n[b]:] = rng.normal(size=(6, 10 - n[b]))
        w2, _ = lv.encoder_forward(params, feats2, n)
        p2 = lv.predict_pixel(w2, lv.voxel_pool(voxels, idx))
        np.testing.assert_allclose(p1, p2, rtol=1e-12)

    def test_init_bounds(self):
        params = init_encoder(np.random.default_rng(5), "no_bias_bn")
        bound1 = conv_weight_bound(6)
        assert bound1 == pytest.approx(1.0 / np.sqrt(18))
        assert np.abs(params.conv_w[0]).max() <= bound1
        assert np.abs(params.conv_w[1]).max() <= conv_weight_bound(32)
        assert np.all(params.bn[0].gamma == 1.0)
        assert np.all(params.bn[0].beta == 0.0)

    def test_same_seed_identical(self):
        a = init_encoder(np.random.default_rng(6), "no_bias_bn")
        b = init_encoder(np.random.default_rng(6), "no_bias_bn")
        for x, y in zip(a.trainable_arrays(), b.trainable_arrays()):
            assert np.array_equal(x, y)

    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(11)
        feats, n = self._inputs(rng)
        params = init_encoder(np.random.default_rng(7), "no_bias_bn")
        w, cache = lv.encoder_forward(params, feats, n, want_cache=True)
        grads = lv.encoder_backward(params, cache, np.zeros_like(w))
        for garr in grads.trainable_arrays():
            assert np.all(garr == 0)

    def test_missing_cache_rejected(self):
        params = init_encoder(np.random.default_rng(8), "no_bias")
        with pytest.raises(ParameterError):
            lv.encoder_backward(params, None, np.zeros((2, 3)))

    def test_deeper_stack_forward_backward(self):
        rng = np.random.default_rng(12)
        feats, n = self._inputs(rng, B=3, N=8)
        params = init_encoder(np.random.default_rng(9), "no_bias_bn",
                              channels=[6, 16, 8, 1])
        w, cache = lv.encoder_forward(params, feats, n, want_cache=True)
        assert w.shape == (3, 8)
        g_w = rng.normal(size=w.shape)
        grads = lv.encoder_backward(params, cache, g_w)
        assert len(grads.trainable_arrays()) == len(params.trainable_arrays())


class TestCheckpoint:
    def test_file_roundtrip_bit_exact(self, tmp_path):
        for variant in ("no_bias", "bias_mask", "no_bias_bn"):
            params = init_encoder(np.random.default_rng(13), variant)
            a = tmp_path / f"{variant}_a.wen"
            b = tmp_path / f"{variant}_b.wen"
            lv.save_encoder(params, a, provenance={"case": "unit"})
            loaded = lv.load_encoder(a)
            lv.save_encoder(loaded, b, provenance={"case": "unit"})
            assert a.read_bytes() == b.read_bytes()
            assert loaded.variant == variant
            assert loaded.channels == params.channels

    def test_loaded_encoder_same_outputs(self, tmp_path):
        rng = np.random.default_rng(14)
        params = init_encoder(np.random.default_rng(15), "no_bias_bn")
        p = tmp_path / "e.wen"
        lv.save_encoder(params, p)
        loaded = lv.load_encoder(p)
        feats = rng.uniform(-1, 1, size=(3, 6, 7)).astype(np.float32)
        w1, _ = lv.encoder_forward(params, feats, training=False)
        w2, _ = lv.encoder_forward(loaded, feats, training=False)
        np.testing.assert_allclose(w1, w2, rtol=1e-6)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.wen"
        p.write_bytes(b"WXYZ" + b"\x00" * 8)
        with pytest.raises(FormatError):
            lv.load_encoder(p)

    def test_truncated_payload(self, tmp_path):
        params = init_encoder(np.random.default_rng(16), "no_bias")
        p = tmp_path / "t.wen"
        lv.save_encoder(params, p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-10])
        with pytest.raises(FormatError):
            lv.load_encoder(p)
