"""
Tests for the dense kernels and the SplitMix64 stream
"""
import itertools
import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_allclose
from tileseam.core.errors import ShapeError, ConfigError, NonFiniteError
from tileseam.core.tensor import conv3d, conv3d_backward, conv3d_transposed, conv3d_transposed_backward, \
    max_pool3d, max_pool3d_backward, avg_pool3d, quantile, prng_next_u64, prng_uniform, prng_normal, SplitMix64, \
    output_extent, assert_finite
from conftest import random_tensor, central_difference, relative_error


def loop_conv(inputs, weights, bias, padding):
    c_out, c_in, k = weights.shape[:3]
    padded = np.pad(inputs, ((0, 0),) + ((padding, padding),) * 3)
    out_shape = tuple(e + 2 * padding - k + 1 for e in inputs.shape[1:])
    out = np.zeros((c_out,) + out_shape)
    for co in range(c_out):
        for z, y, x in np.ndindex(*out_shape):
            total = 0.0
            for ci in range(c_in):
                for dz, dy, dx in np.ndindex(k, k, k):
                    total += weights[co, ci, dz, dy, dx] * padded[ci, z + dz, y + dy, x + dx]
            out[co, z, y, x] = total + bias[co]
    return out


class TestConv3d:

    def test_unit_kernel_is_identity(self):
        x = random_tensor((1, 3, 4, 5))
        y = conv3d(x, np.ones((1, 1, 1, 1, 1)), np.zeros(1))
        assert_array_equal(y, x)

    def test_counts_window_overlap_with_zero_padding(self):
        y = conv3d(np.ones((1, 5, 5, 5)), np.ones((1, 1, 3, 3, 3)), np.zeros(1), padding=1)
        assert y[0, 2, 2, 2] == 27.0
        assert y[0, 0, 0, 0] == 8.0
        assert y[0, 0, 2, 2] == 18.0

    def test_matches_loop_oracle(self):
        x = random_tensor((2, 4, 4, 4), seed=1)
        w = random_tensor((3, 2, 3, 3, 3), seed=2)
        b = random_tensor((3,), seed=3)
        assert_allclose(conv3d(x, w, b, padding=1), loop_conv(x, w, b, 1), rtol=0, atol=1e-12)
        assert_allclose(conv3d(x, w, b, padding=0), loop_conv(x, w, b, 0), rtol=0, atol=1e-12)

    def test_output_does_not_depend_on_window_position(self):
        w = random_tensor((2, 1, 3, 3, 3), seed=4)
        b = random_tensor((2,), seed=5)
        large = random_tensor((1, 10, 10, 10), seed=6)
        full = conv3d(large, w, b)
        window = np.ascontiguousarray(large[:, 3:9, 2:8, 1:7])
        assert_array_equal(conv3d(window, w, b), full[:, 3:7, 2:6, 1:5])

    def test_stride_two(self):
        x = random_tensor((1, 4, 4, 4), seed=7)
        w = random_tensor((1, 1, 2, 2, 2), seed=8)
        y = conv3d(x, w, np.zeros(1), stride=2)
        assert y.shape == (1, 2, 2, 2)
        assert y[0, 1, 0, 1] == pytest.approx((w[0, 0] * x[0, 2:4, 0:2, 2:4]).sum(), abs=1e-12)

    def test_rejects_mismatched_channels(self):
        with pytest.raises(ShapeError):
            conv3d(np.ones((2, 4, 4, 4)), np.ones((1, 1, 3, 3, 3)), np.zeros(1))

    def test_rejects_non_integral_output(self):
        with pytest.raises(ShapeError):
            output_extent(5, 2, 2, 0)

    def test_backward_matches_finite_differences(self):
        x = random_tensor((2, 3, 3, 3), seed=9)
        w = random_tensor((2, 2, 3, 3, 3), seed=10)
        b = random_tensor((2,), seed=11)
        upstream = random_tensor((2, 3, 3, 3), seed=12)

        def loss():
            return float((conv3d(x, w, b, padding=1) * upstream).sum())

        grad_input, grad_weights, grad_bias = conv3d_backward(x, w, upstream, padding=1)
        assert relative_error(grad_input, central_difference(loss, x)) < 1e-6
        assert relative_error(grad_weights, central_difference(loss, w)) < 1e-6
        assert relative_error(grad_bias, central_difference(loss, b)) < 1e-6


class TestConv3dTransposed:

    def test_single_voxel_scatters_to_a_cube(self):
        y = conv3d_transposed(np.full((1, 1, 1, 1), 2.5), np.ones((1, 1, 2, 2, 2)), np.zeros(1))
        assert_array_equal(y, np.full((1, 2, 2, 2), 2.5))

    def test_zero_input_gives_bias(self):
        y = conv3d_transposed(np.zeros((2, 2, 3, 2)), random_tensor((2, 3, 2, 2, 2)), np.array([1.0, -2.0, 0.5]))
        assert y.shape == (3, 4, 6, 4)
        assert_array_equal(y[1], np.full((4, 6, 4), -2.0))

    def test_adjoint_of_strided_convolution(self):
        x = random_tensor((2, 3, 2, 3), seed=13)
        w = random_tensor((2, 3, 2, 2, 2), seed=14)
        y = random_tensor((3, 6, 4, 6), seed=15)
        forward = conv3d_transposed(x, w, np.zeros(3))
        # stride 2 convolution with the same taps, weights laid out [C_out, C_in, ...]
        adjoint = conv3d(y, np.ascontiguousarray(w), np.zeros(2), stride=2)
        lhs, rhs = float((forward * y).sum()), float((x * adjoint).sum())
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_backward_matches_finite_differences(self):
        x = random_tensor((2, 2, 2, 2), seed=16)
        w = random_tensor((2, 3, 2, 2, 2), seed=17)
        b = random_tensor((3,), seed=18)
        upstream = random_tensor((3, 4, 4, 4), seed=19)

        def loss():
            return float((conv3d_transposed(x, w, b) * upstream).sum())

        grad_input, grad_weights, grad_bias = conv3d_transposed_backward(x, w, upstream)
        assert relative_error(grad_input, central_difference(loss, x)) < 1e-6
        assert relative_error(grad_weights, central_difference(loss, w)) < 1e-6
        assert relative_error(grad_bias, central_difference(loss, b)) < 1e-6


class TestPooling:

    def test_constant_input(self):
        pooled, _ = max_pool3d(np.full((2, 4, 4, 6), 3.0))
        assert_array_equal(pooled, np.full((2, 2, 2, 3), 3.0))

    def test_single_peak(self):
        x = np.zeros((1, 2, 2, 2))
        x[0, 1, 1, 1] = 5.0
        pooled, argmax = max_pool3d(x)
        assert pooled[0, 0, 0, 0] == 5.0
        assert argmax[0, 0, 0, 0] == 7

    def test_matches_loop_oracle(self):
        x = random_tensor((2, 4, 6, 4), seed=20)
        pooled, _ = max_pool3d(x)
        for c, z, y, w in np.ndindex(*pooled.shape):
            assert pooled[c, z, y, w] == x[c, 2 * z:2 * z + 2, 2 * y:2 * y + 2, 2 * w:2 * w + 2].max()

    def test_backward_routes_to_the_maximum(self):
        x = random_tensor((1, 4, 4, 4), seed=21)
        pooled, argmax = max_pool3d(x)
        grad = max_pool3d_backward(np.ones_like(pooled), argmax)
        assert grad.sum() == pooled.size
        assert_array_equal(grad != 0, x == np.repeat(np.repeat(np.repeat(pooled, 2, 1), 2, 2), 2, 3))

    def test_average_pool(self):
        x = np.arange(8, dtype=float).reshape(1, 2, 2, 2)
        assert avg_pool3d(x)[0, 0, 0, 0] == 3.5

    def test_odd_extent_rejected(self):
        with pytest.raises(ShapeError):
            max_pool3d(np.zeros((1, 3, 4, 4)))


class TestQuantile:

    def test_boundary_ranks(self):
        values = random_tensor((50,), seed=22)
        assert quantile(values, 0.0) == values.min()
        assert quantile(values, 1.0) == values.max()

    def test_interpolates_between_ranks(self):
        values = np.arange(100, dtype=float)
        assert quantile(values, 0.5) == pytest.approx(49.5, abs=1e-12)
        assert quantile(values, 0.01) == pytest.approx(0.99, abs=1e-12)

    def test_order_of_values_is_irrelevant(self):
        values = np.arange(100, dtype=float)
        assert quantile(values[::-1], 0.25) == quantile(values, 0.25)

    def test_errors(self):
        with pytest.raises(ShapeError):
            quantile([], 0.5)
        with pytest.raises(ConfigError):
            quantile([1.0], 1.5)


class TestSplitMix64:

    def test_reference_vector(self):
        state, value = prng_next_u64(0)
        assert value == 0xE220A8397B1DCDAF
        assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF
        assert state == 0x9E3779B97F4A7C15

    def test_uniform_range(self):
        values = SplitMix64(3).uniform_array(10000)
        assert values.min() >= 0.0
        assert values.max() < 1.0

    def test_scalar_and_array_streams_agree(self):
        scalar = SplitMix64(42)
        vector = SplitMix64(42)
        expected = [scalar.next_u64() for _ in range(17)]
        assert [int(v) for v in vector.u64_array(17)] == expected
        assert scalar.state == vector.state

    def test_functional_interface(self):
        state = 99
        generator = SplitMix64(99)
        for _ in range(5):
            state, value = prng_uniform(state)
            assert value == generator.uniform()
        state, value = prng_normal(state)
        assert value == generator.normal()
        assert state == generator.state

    def test_normal_moments(self):
        values = SplitMix64(7).normal_array(100000)
        assert abs(values.mean()) < 0.02
        assert abs(values.var() - 1.0) < 0.05

    def test_integer_bounds(self):
        generator = SplitMix64(5)
        draws = {generator.integer(2, 4) for _ in range(500)}
        assert draws == {2, 3, 4}

    def test_forks_are_distinct_and_reproducible(self):
        parent = SplitMix64(1)
        a, b = parent.fork(1), parent.fork(2)
        assert a.next_u64() != b.next_u64()
        assert SplitMix64(1).fork(1).next_u64() == SplitMix64(1).fork(1).next_u64()


def test_assert_finite():
    assert_finite(np.ones(3))
    with pytest.raises(NonFiniteError):
        assert_finite(np.array([1.0, np.nan]))


@pytest.mark.parametrize('offset', list(itertools.product((0, 1), repeat=3)))
def test_transposed_phase_layout(offset):
    w = np.zeros((1, 1, 2, 2, 2))
    w[(0, 0) + offset] = 1.0
    y = conv3d_transposed(np.ones((1, 2, 2, 2)), w, np.zeros(1))
    expected = np.zeros((1, 4, 4, 4))
    expected[(0,) + tuple(slice(o, None, 2) for o in offset)] = 1.0
    assert_array_equal(y, expected)
