import numpy as np
import pytest

from lcnn.errors import BoundsError, DimensionError, UnsupportedGeometryError
from lcnn.tensor_ops import (
    ConvGeom,
    conv1x1_all,
    conv2d_as_shifted_sum,
    conv2d_dense,
    one_hot_kernel,
    shift2d,
    tap_shift_offsets,
)
from _oracles import assert_close, int_tensor, naive_conv1x1, naive_conv2d, naive_shift2d


class TestConvGeom:
    def test_derived_dims(self):
        g = ConvGeom(m=3, n=4, kh=3, kw=3, h=8, w=8, stride=1, pad=1)
        assert (g.h_out, g.w_out) == (8, 8)

    def test_strided(self):
        g = ConvGeom(m=1, n=1, kh=3, kw=3, h=9, w=9, stride=2, pad=0)
        assert (g.h_out, g.w_out) == (4, 4)

    def test_indivisible_rejected(self):
        with pytest.raises(DimensionError):
            ConvGeom(m=1, n=1, kh=3, kw=3, h=8, w=8, stride=2, pad=0)

    def test_too_small_rejected(self):
        with pytest.raises(DimensionError):
            ConvGeom(m=1, n=1, kh=5, kw=5, h=3, w=3, stride=1, pad=0)


class TestShift2d:
    def test_column_shift(self):
        t = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
        out = shift2d(t, 0, 1)
        assert np.array_equal(out, np.array([[[0, 1], [0, 3]]], dtype=np.float32))

    def test_identity(self):
        rng = np.random.default_rng(0)
        t = rng.normal(size=(2, 5, 5)).astype(np.float32)
        assert np.array_equal(shift2d(t, 0, 0), t)

    def test_zero_tensor(self):
        z = np.zeros((2, 4, 4), dtype=np.float32)
        assert np.array_equal(shift2d(z, 2, -1), z)

    def test_full_shift_out(self):
        rng = np.random.default_rng(1)
        t = rng.normal(size=(1, 3, 3)).astype(np.float32)
        assert np.array_equal(shift2d(t, 5, 0), np.zeros_like(t))

    def test_round_trip_on_interior(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            t = np.zeros((2, 4, 4), dtype=np.float32)
            t[:, 1:3, 1:3] = rng.normal(size=(2, 2, 2))
            assert np.array_equal(shift2d(shift2d(t, 1, 0), -1, 0), t)

    def test_matches_naive(self):
        rng = np.random.default_rng(3)
        t = rng.normal(size=(3, 4, 4)).astype(np.float32)
        for dr in range(-4, 5):
            for dc in range(-4, 5):
                assert np.array_equal(shift2d(t, dr, dc), naive_shift2d(t, dr, dc))


class TestConv2dDense:
    def test_scalar_scaling(self):
        x = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
        w = np.array([[[[2.0]]]], dtype=np.float32)
        g = ConvGeom(m=1, n=1, kh=1, kw=1, h=2, w=2)
        y = conv2d_dense(x, w, np.zeros(1, dtype=np.float32), g)
        assert np.array_equal(y, np.array([[[2, 4], [6, 8]]], dtype=np.float32))

    def test_bias_only(self):
        rng = np.random.default_rng(4)
        g = ConvGeom(m=2, n=3, kh=3, kw=3, h=6, w=6, pad=1)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        y = conv2d_dense(np.zeros((2, 6, 6), dtype=np.float32), w,
                         np.full(3, 5.0, dtype=np.float32), g)
        assert np.array_equal(y, np.full((3, 6, 6), 5.0, dtype=np.float32))

    def test_matches_naive_exactly(self):
        # integer-valued tensors: both paths are exact, equality is bitwise
        rng = np.random.default_rng(5)
        x = int_tensor(rng, (3, 8, 8))
        w = int_tensor(rng, (4, 3, 3, 3))
        b = int_tensor(rng, (4,))
        g = ConvGeom(m=3, n=4, kh=3, kw=3, h=8, w=8, stride=1, pad=1)
        ref = naive_conv2d(x, w, b, stride=1, pad=1)
        assert np.array_equal(conv2d_dense(x, w, b, g).astype(np.float64), ref)

    @pytest.mark.parametrize("stride,pad,size", [(1, 0, 7), (2, 1, 7), (2, 2, 9), (1, 2, 5)])
    def test_matches_naive_geometries(self, stride, pad, size):
        rng = np.random.default_rng(6 + stride * 10 + pad)
        x = int_tensor(rng, (2, size, size))
        w = int_tensor(rng, (3, 2, 3, 3))
        b = int_tensor(rng, (3,))
        g = ConvGeom(m=2, n=3, kh=3, kw=3, h=size, w=size, stride=stride, pad=pad)
        ref = naive_conv2d(x, w, b, stride=stride, pad=pad)
        assert np.array_equal(conv2d_dense(x, w, b, g).astype(np.float64), ref)

    def test_linear_in_input(self):
        rng = np.random.default_rng(7)
        g = ConvGeom(m=3, n=4, kh=3, kw=3, h=8, w=8, pad=1)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = np.zeros(4, dtype=np.float32)
        x1 = rng.normal(size=(3, 8, 8)).astype(np.float32)
        x2 = rng.normal(size=(3, 8, 8)).astype(np.float32)
        lhs = conv2d_dense(2.0 * x1 + 3.0 * x2, w, b, g)
        rhs = 2.0 * conv2d_dense(x1, w, b, g) + 3.0 * conv2d_dense(x2, w, b, g)
        assert_close(lhs, rhs, 1e-6, "linearity")

    def test_shape_mismatch(self):
        g = ConvGeom(m=3, n=4, kh=3, kw=3, h=8, w=8, pad=1)
        with pytest.raises(DimensionError):
            conv2d_dense(np.zeros((2, 8, 8), dtype=np.float32),
                         np.zeros((4, 3, 3, 3), dtype=np.float32),
                         np.zeros(4, dtype=np.float32), g)


class TestConv1x1All:
    def test_identity_dictionary(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 6, 6)).astype(np.float32)
        assert np.array_equal(conv1x1_all(x, np.eye(4, dtype=np.float32)), x)

    def test_ones_row_is_channel_sum(self):
        rng = np.random.default_rng(9)
        x = int_tensor(rng, (3, 5, 5))
        s = conv1x1_all(x, np.ones((1, 3), dtype=np.float32))
        assert np.array_equal(s[0], x.sum(axis=0))

    def test_matches_naive_exactly(self):
        rng = np.random.default_rng(10)
        d = int_tensor(rng, (5, 3))
        x = int_tensor(rng, (3, 6, 6))
        assert np.array_equal(conv1x1_all(x, d).astype(np.float64), naive_conv1x1(x, d))

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv1x1_all(np.zeros((3, 4, 4), dtype=np.float32), np.zeros((2, 5), dtype=np.float32))


class TestShiftedSum:
    def test_1x1_kernel_equals_dense(self):
        rng = np.random.default_rng(11)
        g = ConvGeom(m=3, n=2, kh=1, kw=1, h=5, w=5)
        x = rng.normal(size=(3, 5, 5)).astype(np.float32)
        w = rng.normal(size=(2, 3, 1, 1)).astype(np.float32)
        assert_close(conv2d_as_shifted_sum(x, w, g),
                     conv2d_dense(x, w, np.zeros(2, dtype=np.float32), g), 1e-6)

    def test_single_tap_is_shifted_copy(self):
        rng = np.random.default_rng(12)
        g = ConvGeom(m=2, n=1, kh=3, kw=3, h=6, w=6, pad=1)
        w = np.zeros((1, 2, 3, 3), dtype=np.float32)
        r0, c0 = 0, 2
        w[0, :, r0, c0] = rng.normal(size=2).astype(np.float32)
        x = rng.normal(size=(2, 6, 6)).astype(np.float32)
        out = conv2d_as_shifted_sum(x, w, g)
        contracted = conv1x1_all(x, w[0, :, r0, c0][None])
        dr, dc = tap_shift_offsets(r0, c0, 3, 3)
        assert_close(out[0], shift2d(contracted, dr, dc)[0], 1e-6)

    def test_equals_dense_random(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            m, n = rng.integers(1, 9, 2)
            kernel = int(rng.choice([1, 3, 5]))
            pad = int(rng.integers(0, 3))
            size = int(rng.integers(max(kernel - 2 * pad, kernel), 16))
            g = ConvGeom(m=int(m), n=int(n), kh=kernel, kw=kernel, h=size, w=size, pad=pad)
            x = rng.normal(size=(m, size, size)).astype(np.float32)
            w = rng.normal(size=(n, m, kernel, kernel)).astype(np.float32)
            dense = conv2d_dense(x, w, np.zeros(int(n), dtype=np.float32), g)
            assert_close(conv2d_as_shifted_sum(x, w, g), dense, 1e-6, "shifted-sum")

    def test_stride_rejected(self):
        g = ConvGeom(m=1, n=1, kh=3, kw=3, h=9, w=9, stride=2)
        with pytest.raises(UnsupportedGeometryError):
            conv2d_as_shifted_sum(np.zeros((1, 9, 9), dtype=np.float32),
                                  np.zeros((1, 1, 3, 3), dtype=np.float32), g)


class TestOneHotKernel:
    def test_minimal(self):
        w = one_hot_kernel(0, 0, 0, 1, 1, 1)
        assert w.shape == (1, 1, 1, 1) and w[0, 0, 0, 0] == 1.0

    def test_sums_to_one(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            k, kh, kw = rng.integers(1, 6, 3)
            t, r, c = rng.integers(0, [k, kh, kw])
            assert one_hot_kernel(int(t), int(r), int(c), int(k), int(kh), int(kw)).sum() == 1.0

    def test_out_of_range(self):
        with pytest.raises(BoundsError):
            one_hot_kernel(3, 0, 0, 3, 1, 1)

    @pytest.mark.parametrize("kernel", [1, 3, 5])
    def test_shift_identity_all_taps(self, kernel):
        # convolving S with a one-hot tap under "same" padding is exactly a shift
        rng = np.random.default_rng(15)
        s = rng.normal(size=(4, 6, 6)).astype(np.float32)
        g = ConvGeom(m=4, n=1, kh=kernel, kw=kernel, h=6, w=6, pad=kernel // 2)
        for t in range(4):
            for r in range(kernel):
                for c in range(kernel):
                    w = one_hot_kernel(t, r, c, 4, kernel, kernel)
                    lhs = conv2d_dense(s, w, np.zeros(1, dtype=np.float32), g)[0]
                    dr, dc = tap_shift_offsets(r, c, kernel, kernel)
                    assert np.array_equal(lhs, shift2d(s[t][None], dr, dc)[0])
