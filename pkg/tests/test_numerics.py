import numpy as np
import pytest

from app.core.errors import ContractViolation
from app.services.numerics import (
    ConvKernel3x3,
    DepthMap,
    as_grid,
    bilinear_gradient,
    bilinear_sample,
    box3x3,
    box3x3_adjoint,
    conv3x3,
    conv3x3_adjoint,
    relu,
    sigmoid,
    softmax_over_bins,
    window_stats,
)


def naive_conv(src, kernel):
    height, width, _ = src.shape
    out = np.zeros((height, width, kernel.out_channels))
    for y in range(height):
        for x in range(width):
            acc = kernel.bias.copy()
            for ky in range(3):
                for kx in range(3):
                    yy = min(max(y + ky - 1, 0), height - 1)
                    xx = min(max(x + kx - 1, 0), width - 1)
                    acc = acc + src[yy, xx] @ kernel.weights[ky, kx]
            out[y, x] = acc
    return out


def naive_window(a):
    height, width, channels = a.shape
    out = np.zeros_like(a)
    for y in range(height):
        for x in range(width):
            total = np.zeros(channels)
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    total += a[min(max(y + dy, 0), height - 1), min(max(x + dx, 0), width - 1)]
            out[y, x] = total / 9.0
    return out


class TestBilinearSample:
    def test_integer_coords_reproduce_source(self, rng):
        src = rng.normal(size=(5, 7, 3))
        ys, xs = np.meshgrid(np.arange(5.0), np.arange(7.0), indexing="ij")
        values, mask = bilinear_sample(src, np.stack([xs, ys], axis=-1))
        np.testing.assert_array_equal(values, src)
        assert mask.all()

    def test_out_of_bounds_is_zero_and_invalid(self, rng):
        src = rng.normal(size=(4, 4, 2))
        values, mask = bilinear_sample(src, np.array([[-1.0, -1.0], [3.5, 0.0]]))
        np.testing.assert_array_equal(values, 0.0)
        np.testing.assert_array_equal(mask, 0.0)

    def test_half_pixel_interpolates(self):
        src = as_grid(np.array([[2.0, 4.0]]))
        values, mask = bilinear_sample(src, np.array([0.5, 0.0]))
        assert values[0] == pytest.approx(3.0)
        assert mask == 1.0

    def test_linear_along_each_axis(self, rng):
        src = rng.normal(size=(3, 3, 1))
        t = np.linspace(0.0, 1.0, 6)
        coords = np.stack([1.0 + t, np.full_like(t, 2.0)], axis=-1)
        values, _ = bilinear_sample(src, coords)
        expected = (1 - t) * src[2, 1, 0] + t * src[2, 2, 0]
        np.testing.assert_allclose(values[:, 0], expected, atol=1e-12)

    def test_gradient_matches_finite_difference(self, rng):
        src = rng.normal(size=(6, 6, 2))
        coords = np.array([[2.3, 3.6], [1.7, 0.4]])
        d_dx, d_dy = bilinear_gradient(src, coords)
        h = 1e-6
        fx = (bilinear_sample(src, coords + [h, 0])[0] - bilinear_sample(src, coords - [h, 0])[0]) / (2 * h)
        fy = (bilinear_sample(src, coords + [0, h])[0] - bilinear_sample(src, coords - [0, h])[0]) / (2 * h)
        np.testing.assert_allclose(d_dx, fx, atol=1e-6)
        np.testing.assert_allclose(d_dy, fy, atol=1e-6)


class TestConv3x3:
    def test_zero_weights_give_bias(self, rng):
        out = conv3x3(rng.normal(size=(4, 5, 2)), ConvKernel3x3.zeros(2, 3, bias=0.7))
        np.testing.assert_array_equal(out, 0.7)

    def test_identity_kernel(self, rng):
        src = rng.normal(size=(4, 5, 3))
        np.testing.assert_allclose(conv3x3(src, ConvKernel3x3.identity(3)), src, atol=1e-15)

    def test_matches_direct_summation(self, rng):
        src = rng.normal(size=(5, 5, 2))
        kernel = ConvKernel3x3(rng.normal(size=(3, 3, 2, 3)), rng.normal(size=3))
        np.testing.assert_allclose(conv3x3(src, kernel), naive_conv(src, kernel), atol=1e-12)

    def test_linear_for_zero_bias(self, rng):
        a, b = rng.normal(size=(2, 6, 4, 2))
        kernel = ConvKernel3x3(rng.normal(size=(3, 3, 2, 2)), np.zeros(2))
        lhs = conv3x3(2.0 * a - 0.5 * b, kernel)
        rhs = 2.0 * conv3x3(a, kernel) - 0.5 * conv3x3(b, kernel)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ContractViolation):
            conv3x3(rng.normal(size=(4, 4, 2)), ConvKernel3x3.zeros(3, 1))

    def test_adjoint(self, rng):
        x = rng.normal(size=(5, 6, 2))
        g = rng.normal(size=(5, 6, 3))
        kernel = ConvKernel3x3(rng.normal(size=(3, 3, 2, 3)), np.zeros(3))
        assert (conv3x3(x, kernel) * g).sum() == pytest.approx((x * conv3x3_adjoint(g, kernel)).sum(), rel=1e-10)

    def test_box_adjoint(self, rng):
        x = rng.normal(size=(5, 4, 1))
        g = rng.normal(size=(5, 4, 1))
        assert (box3x3(x) * g).sum() == pytest.approx((x * box3x3_adjoint(g)).sum(), rel=1e-10)

    def test_pure(self, rng):
        src = rng.normal(size=(4, 4, 2))
        kernel = ConvKernel3x3.seeded(2, 2, seed=5)
        before = src.copy()
        first = conv3x3(src, kernel)
        np.testing.assert_array_equal(first, conv3x3(src, kernel))
        np.testing.assert_array_equal(src, before)


class TestActivations:
    def test_scalars(self):
        assert sigmoid(np.array(0.0)) == 0.5
        assert relu(np.array(-3.0)) == 0.0

    def test_sigmoid_open_interval_for_moderate_inputs(self):
        values = sigmoid(np.linspace(-30, 30, 61))
        assert np.all(values > 0) and np.all(values < 1)

    def test_softmax_equal_logits(self):
        probs = softmax_over_bins(np.zeros((4, 2, 3, 1)))
        np.testing.assert_allclose(probs, 0.25)

    def test_softmax_normalized(self, rng):
        probs = softmax_over_bins(rng.normal(scale=20.0, size=(7, 3, 4, 2)))
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=0), 1.0, atol=1e-9)

    def test_softmax_masked_bins(self):
        logits = np.array([1.0, 5.0, 2.0])[:, None, None]
        valid = np.array([True, False, True])[:, None, None]
        probs = softmax_over_bins(logits, valid)
        assert probs[1, 0, 0] == 0.0
        assert probs[:, 0, 0].sum() == pytest.approx(1.0)

    def test_softmax_without_valid_bins_is_uniform(self):
        probs = softmax_over_bins(np.ones((4, 1, 1)), np.zeros((4, 1, 1), dtype=bool))
        np.testing.assert_allclose(probs, 0.25)


class TestWindowStats:
    def test_constant_pair(self):
        a = np.full((4, 4, 1), 3.0)
        stats = window_stats(a, a)
        np.testing.assert_allclose(stats.var_a, 0.0, atol=1e-12)
        np.testing.assert_allclose(stats.cov, 0.0, atol=1e-12)

    def test_self_covariance_is_variance(self, rng):
        a = rng.normal(size=(5, 6, 2))
        stats = window_stats(a, a)
        np.testing.assert_allclose(stats.cov, stats.var_a, atol=1e-12)

    def test_matches_window_loop(self, rng):
        a, b = rng.normal(size=(2, 5, 6, 1))
        stats = window_stats(a, b)
        mean_a, mean_b = naive_window(a), naive_window(b)
        np.testing.assert_allclose(stats.mean_a, mean_a, atol=1e-12)
        np.testing.assert_allclose(stats.var_b, naive_window(b * b) - mean_b ** 2, atol=1e-12)
        np.testing.assert_allclose(stats.cov, naive_window(a * b) - mean_a * mean_b, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            window_stats(np.zeros((3, 3, 1)), np.zeros((3, 4, 1)))


class TestDepthMap:
    def test_dense_marks_positive(self):
        d = DepthMap.dense(np.array([[1.0, 0.0], [2.0, 3.0]]))
        np.testing.assert_array_equal(d.valid, [[True, False], [True, True]])

    def test_rejects_non_finite(self):
        with pytest.raises(ContractViolation):
            DepthMap(np.array([[np.nan]]), True)

    def test_as_grid_adds_channel(self):
        assert as_grid(np.zeros((3, 4))).shape == (3, 4, 1)
