import numpy as np
import pytest

from lcnn.errors import BoundsError, DimensionError, ModeError
from lcnn.layer import (
    Dictionary,
    LcnnConvLayer,
    LookupTables,
    SparseCombiner,
    fc_as_conv,
    forward_lookup,
    forward_sparse,
    ic_to_p,
    p_to_ic,
    reconstruct_weights,
)
from lcnn.perf import OpCounter
from lcnn.tensor_ops import ConvGeom, conv2d_dense
from _oracles import (
    assert_close,
    int_tensor,
    naive_reconstruct,
    random_lcnn_layer,
    random_sparse_combiner,
)


def single_tap_tables(n, kh, kw, entries):
    """entries: {(i, r, c): (idx_list, coeff_list)}"""
    t = LookupTables.empty(n, kh, kw)
    for (i, r, c), (idx, co) in entries.items():
        t.indices[i][r][c] = np.asarray(idx, dtype=np.int32)
        t.coeffs[i][r][c] = np.asarray(co, dtype=np.float32)
    return t


class TestReconstructWeights:
    def test_two_component_column(self):
        d = Dictionary(np.array([[1, 2], [3, 4]], dtype=np.float32))
        t = single_tap_tables(1, 1, 1, {(0, 0, 0): ([0, 1], [1.0, 0.5])})
        g = ConvGeom(m=2, n=1, kh=1, kw=1, h=1, w=1)
        w = reconstruct_weights(d, t, g)
        assert np.array_equal(w[0, :, 0, 0], np.array([2.5, 4.0], dtype=np.float32))

    def test_single_index_copies_row(self):
        rng = np.random.default_rng(0)
        d = Dictionary(rng.normal(size=(4, 3)).astype(np.float32))
        t = single_tap_tables(2, 1, 1, {(1, 0, 0): ([2], [1.0])})
        g = ConvGeom(m=3, n=2, kh=1, kw=1, h=1, w=1)
        w = reconstruct_weights(d, t, g)
        assert np.array_equal(w[1, :, 0, 0], d.data[2])
        assert np.array_equal(w[0], np.zeros((3, 1, 1), dtype=np.float32))

    def test_matches_naive_exactly(self):
        rng = np.random.default_rng(1)
        d = Dictionary(int_tensor(rng, (6, 4)))
        g = ConvGeom(m=4, n=3, kh=3, kw=3, h=5, w=5, pad=1)
        t = LookupTables.empty(3, 3, 3)
        for i in range(3):
            for r in range(3):
                for c in range(3):
                    size = int(rng.integers(0, 4))
                    idx = np.sort(rng.choice(6, size=size, replace=False)).astype(np.int32)
                    t.indices[i][r][c] = idx
                    t.coeffs[i][r][c] = int_tensor(rng, (size,), lo=1, hi=4)
        ref = naive_reconstruct(d.data, t, 3, 4, 3, 3)
        assert np.array_equal(reconstruct_weights(d, t, g).astype(np.float64), ref)

    def test_linear_in_coefficients(self):
        rng = np.random.default_rng(2)
        layer = random_lcnn_layer(rng, mode="inference")
        w1 = reconstruct_weights(layer.dict, layer.tables, layer.geom)
        doubled = layer.tables.astype(np.float32)
        for i, r, c, idx, co in doubled.taps():
            doubled.coeffs[i][r][c] = co * 2.0
        w2 = reconstruct_weights(layer.dict, doubled, layer.geom)
        assert np.array_equal(w2, 2.0 * w1)

    def test_bounds(self):
        d = Dictionary(np.zeros((2, 2), dtype=np.float32))
        t = single_tap_tables(1, 1, 1, {(0, 0, 0): ([5], [1.0])})
        g = ConvGeom(m=2, n=1, kh=1, kw=1, h=1, w=1)
        with pytest.raises(BoundsError):
            reconstruct_weights(d, t, g)


class TestConversions:
    def test_read_off_nonzeros(self):
        p = np.zeros((1, 4, 1, 1), dtype=np.float32)
        p[0, :, 0, 0] = [0, 0.7, 0, -0.2]
        t = p_to_ic(SparseCombiner(p=p))
        assert t.indices[0][0][0].tolist() == [1, 3]
        assert np.allclose(t.coeffs[0][0][0], [0.7, -0.2])

    def test_zero_column_empty_lists(self):
        t = p_to_ic(SparseCombiner(p=np.zeros((2, 3, 2, 2), dtype=np.float32)))
        assert t.total_components() == 0

    def test_scatter_back(self):
        t = single_tap_tables(1, 1, 1, {(0, 0, 0): ([1, 3], [0.7, -0.2])})
        comb = ic_to_p(t, 4)
        assert np.allclose(comb.p[0, :, 0, 0], [0, 0.7, 0, -0.2])

    def test_empty_lists_zero_column(self):
        comb = ic_to_p(LookupTables.empty(2, 1, 1), 3)
        assert not comb.p.any()

    def test_round_trip_p(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            comb = random_sparse_combiner(rng, int(rng.integers(1, 5)), int(rng.integers(1, 7)),
                                          3, 3)
            back = ic_to_p(p_to_ic(comb), comb.k)
            assert np.array_equal(back.p, comb.p)

    def test_round_trip_tables(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            comb = random_sparse_combiner(rng, 3, 5, 2, 2)
            t = p_to_ic(comb)
            t2 = p_to_ic(ic_to_p(t, 5))
            for (i, r, c, idx, co), (_, _, _, idx2, co2) in zip(t.taps(), t2.taps()):
                assert np.array_equal(idx, idx2)
                assert np.array_equal(co, co2)

    def test_ic_to_p_bounds(self):
        t = single_tap_tables(1, 1, 1, {(0, 0, 0): ([4], [1.0])})
        with pytest.raises(BoundsError):
            ic_to_p(t, 3)

    def test_canonical_merges_duplicates(self):
        t = LookupTables.canonical([[[[2, 0, 2]]]], [[[[1.0, 3.0, -1.0]]]], 1, 1, 1)
        # the duplicate index-2 entries cancel; only index 0 survives
        assert t.indices[0][0][0].tolist() == [0]
        assert t.coeffs[0][0][0].tolist() == [3.0]


class TestForwardPaths:
    def test_lookup_matches_dense_with_identity_dictionary(self):
        rng = np.random.default_rng(5)
        m = 4
        g = ConvGeom(m=m, n=3, kh=3, kw=3, h=7, w=7, pad=1)
        w = rng.normal(size=(3, m, 3, 3)).astype(np.float32)
        bias = rng.normal(size=3).astype(np.float32)
        # encode the dense W as P over the identity dictionary
        p = np.transpose(w, (0, 1, 2, 3)).copy()  # (n, m=k, kh, kw)
        layer = LcnnConvLayer(geom=g, dictionary=Dictionary(np.eye(m, dtype=np.float32)),
                              combiner=SparseCombiner(p=p), bias=bias)
        layer.to_inference()
        x = rng.normal(size=(m, 7, 7)).astype(np.float32)
        assert_close(forward_lookup(x, layer), conv2d_dense(x, w, bias, g), 1e-5)

    def test_empty_tables_bias_broadcast(self):
        g = ConvGeom(m=2, n=3, kh=3, kw=3, h=5, w=5, pad=1)
        bias = np.array([1.0, -2.0, 0.5], dtype=np.float32)
        layer = LcnnConvLayer(geom=g, dictionary=Dictionary(np.ones((2, 2), dtype=np.float32)),
                              tables=LookupTables.empty(3, 3, 3), bias=bias)
        y = forward_lookup(np.random.default_rng(6).normal(size=(2, 5, 5)).astype(np.float32), layer)
        assert np.array_equal(y, np.broadcast_to(bias[:, None, None], (3, 5, 5)))

    def test_single_channel_copy(self):
        g = ConvGeom(m=3, n=2, kh=1, kw=1, h=4, w=4)
        d = np.zeros((1, 3), dtype=np.float32)
        d[0, 0] = 1.0
        t = LookupTables.empty(2, 1, 1)
        for i in range(2):
            t.indices[i][0][0] = np.array([0], dtype=np.int32)
            t.coeffs[i][0][0] = np.array([2.0], dtype=np.float32)
        bias = np.array([0.25, -1.0], dtype=np.float32)
        layer = LcnnConvLayer(geom=g, dictionary=Dictionary(d), tables=t, bias=bias)
        x = np.random.default_rng(7).normal(size=(3, 4, 4)).astype(np.float32)
        y = forward_lookup(x, layer)
        for i in range(2):
            assert_close(y[i], 2.0 * x[0] + bias[i], 1e-6)

    def test_sparse_equals_lookup_and_dense(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            layer = random_lcnn_layer(rng)
            g = layer.geom
            x = rng.normal(size=(g.m, g.h, g.w)).astype(np.float32)
            y_sparse = forward_sparse(x, layer)
            infer = LcnnConvLayer(geom=g, dictionary=layer.dict,
                                  tables=p_to_ic(layer.combiner), bias=layer.bias)
            y_lookup = forward_lookup(x, infer)
            w = reconstruct_weights(layer.dict, infer.tables, g)
            y_dense = conv2d_dense(x, w, layer.bias, g)
            assert_close(y_sparse, y_lookup, 1e-5, "sparse vs lookup")
            assert_close(y_sparse, y_dense, 1e-5, "sparse vs dense")

    def test_all_zero_p_bias_broadcast(self):
        g = ConvGeom(m=2, n=2, kh=3, kw=3, h=5, w=5, pad=1)
        bias = np.array([3.0, -1.0], dtype=np.float32)
        layer = LcnnConvLayer(geom=g, dictionary=Dictionary(np.ones((3, 2), dtype=np.float32)),
                              combiner=SparseCombiner(p=np.zeros((2, 3, 3, 3), dtype=np.float32)),
                              bias=bias)
        x = np.random.default_rng(9).normal(size=(2, 5, 5)).astype(np.float32)
        y = forward_sparse(x, layer)
        assert np.array_equal(y, np.broadcast_to(bias[:, None, None], (2, 5, 5)))

    def test_mode_errors(self):
        rng = np.random.default_rng(10)
        train_layer = random_lcnn_layer(rng)
        infer_layer = random_lcnn_layer(rng, mode="inference")
        x = np.zeros((train_layer.geom.m, train_layer.geom.h, train_layer.geom.w), np.float32)
        with pytest.raises(ModeError):
            forward_lookup(x, train_layer)
        x2 = np.zeros((infer_layer.geom.m, infer_layer.geom.h, infer_layer.geom.w), np.float32)
        with pytest.raises(ModeError):
            forward_sparse(x2, infer_layer)

    def test_precompute_counted_once_regardless_of_n(self):
        rng = np.random.default_rng(11)
        for n in (1, 4, 8):
            layer = random_lcnn_layer(rng, m=3, n=n, k=5, kernel=3, stride=1, pad=1,
                                      mode="inference")
            g = layer.geom
            x = rng.normal(size=(g.m, g.h, g.w)).astype(np.float32)
            counter = OpCounter()
            forward_lookup(x, layer, counter)
            assert counter.precompute_mults + counter.precompute_adds == 2 * 5 * 3 * g.h * g.w

    def test_frozen_dictionary_untouched(self):
        rng = np.random.default_rng(12)
        layer = random_lcnn_layer(rng, mode="inference")
        layer.dict.frozen = True
        before = layer.dict.data.tobytes()
        g = layer.geom
        forward_lookup(rng.normal(size=(g.m, g.h, g.w)).astype(np.float32), layer)
        assert layer.dict.data.tobytes() == before


class TestFcAsConv:
    def test_definitional(self):
        g = fc_as_conv(4096, 1000)
        assert (g.m, g.n, g.kh, g.kw, g.h, g.w) == (4096, 1000, 1, 1, 1, 1)

    def test_zero_counts_rejected(self):
        with pytest.raises(DimensionError):
            fc_as_conv(0, 5)

    def test_forward_equals_matrix_product(self):
        rng = np.random.default_rng(13)
        g = fc_as_conv(12, 5)
        d = rng.normal(size=(6, 12)).astype(np.float32)
        comb = random_sparse_combiner(rng, 5, 6, 1, 1, density=0.7)
        bias = rng.normal(size=5).astype(np.float32)
        layer = LcnnConvLayer(geom=g, dictionary=Dictionary(d), combiner=comb, bias=bias,
                              is_fc=True)
        x = rng.normal(size=(12, 1, 1)).astype(np.float32)
        w = reconstruct_weights(layer.dict, p_to_ic(comb), g)
        expected = w[:, :, 0, 0] @ x[:, 0, 0] + bias
        assert_close(forward_sparse(x, layer)[:, 0, 0], expected, 1e-5)

    def test_degenerate_1x1(self):
        rng = np.random.default_rng(14)
        g = fc_as_conv(1, 1)
        layer = LcnnConvLayer(geom=g, dictionary=Dictionary(np.array([[2.0]], dtype=np.float32)),
                              combiner=SparseCombiner(p=np.array([[[[1.5]]]], dtype=np.float32)),
                              bias=np.array([0.5], dtype=np.float32), is_fc=True)
        y = forward_sparse(np.array([[[3.0]]], dtype=np.float32), layer)
        assert_close(y, np.array([[[3.0 * 2.0 * 1.5 + 0.5]]]), 1e-6)


class TestLayerContracts:
    def test_exactly_one_form(self):
        g = ConvGeom(m=2, n=2, kh=1, kw=1, h=2, w=2)
        d = Dictionary(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ModeError):
            LcnnConvLayer(geom=g, dictionary=d)
        with pytest.raises(ModeError):
            LcnnConvLayer(geom=g, dictionary=d,
                          combiner=SparseCombiner(p=np.zeros((2, 2, 1, 1), dtype=np.float32)),
                          tables=LookupTables.empty(2, 1, 1))

    def test_dictionary_width_checked(self):
        g = ConvGeom(m=3, n=2, kh=1, kw=1, h=2, w=2)
        with pytest.raises(DimensionError):
            LcnnConvLayer(geom=g, dictionary=Dictionary(np.zeros((2, 2), dtype=np.float32)),
                          combiner=SparseCombiner(p=np.zeros((2, 2, 1, 1), dtype=np.float32)))

    def test_oversized_dictionary_warns(self):
        g = ConvGeom(m=2, n=1, kh=1, kw=1, h=2, w=2)
        with pytest.warns(UserWarning, match="dictionary size"):
            LcnnConvLayer(geom=g, dictionary=Dictionary(np.zeros((3, 2), dtype=np.float32)),
                          combiner=SparseCombiner(p=np.zeros((1, 3, 1, 1), dtype=np.float32)))
