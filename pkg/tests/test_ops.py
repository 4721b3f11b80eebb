import numpy as np
import pytest

from approxnn import ops
from approxnn.ops import (
    ConvGeometry,
    CostCounter,
    FilterSampleSpec,
    PerforationSpec,
    ShapeError,
)
from conftest import random_conv_case
from oracles import (
    batch_norm_direct,
    conv2d_direct,
    entropy,
    matmul_direct,
    pool_direct,
    removed_count_enum,
    softmax_direct,
)


def rel_close(got, want, tol):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.abs(want), 1.0)
    return np.max(np.abs(got - want) / denom) <= tol


class TestConvExact:
    def test_all_ones(self):
        c = CostCounter()
        out = ops.conv2d_exact(
            np.ones((1, 1, 3, 3), np.float32), np.ones((1, 1, 2, 2), np.float32), None, ConvGeometry(), c
        )
        assert out.shape == (1, 1, 2, 2)
        assert np.all(out == 4.0)
        assert c.macs == 1 * 1 * 2 * 2 * 1 * 2 * 2

    def test_zero_filter(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        bias = np.asarray([1.5, -2.0, 0.25], np.float32)
        out = ops.conv2d_exact(x, np.zeros((3, 2, 2, 2), np.float32), bias, ConvGeometry(), CostCounter())
        for k in range(3):
            assert np.all(out[:, k] == bias[k])

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(120):
            x, w, bias, stride, pad = random_conv_case(rng)
            geom = ConvGeometry(stride[0], stride[1], pad[0], pad[1])
            got = ops.conv2d_exact(x, w, bias, geom, CostCounter())
            want = conv2d_direct(x, w, bias, stride, pad)
            assert rel_close(got, want, 1e-5)

    def test_mac_count(self):
        rng = np.random.default_rng(1)
        x, w, bias, stride, pad = random_conv_case(rng)
        geom = ConvGeometry(stride[0], stride[1], pad[0], pad[1])
        c = CostCounter()
        out = ops.conv2d_exact(x, w, bias, geom, c)
        n, k, oh, ow = out.shape
        assert c.macs == n * k * oh * ow * w.shape[1] * w.shape[2] * w.shape[3]

    def test_channel_mismatch_names_dims(self):
        with pytest.raises(ShapeError, match="channels"):
            ops.conv2d_exact(
                np.zeros((1, 2, 4, 4), np.float32),
                np.zeros((1, 3, 2, 2), np.float32),
                None,
                ConvGeometry(),
                CostCounter(),
            )


class TestPerforation:
    def test_fig_skip_pattern(self):
        # stride 2 offset 1 on 4 output rows: rows {1,3} skipped, {0,2} computed
        perf = PerforationSpec("row", 2, 1)
        assert perf.skipped(4).tolist() == [1, 3]
        assert perf.computed(4).tolist() == [0, 2]

    def test_skipped_rows_interpolated(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(1, 2, 9, 9)).astype(np.float32)
        w = rng.normal(size=(2, 2, 2, 2)).astype(np.float32)
        perf = PerforationSpec("row", 2, 1)
        got = ops.conv2d_perforated(x, w, None, ConvGeometry(), perf, CostCounter())
        exact = ops.conv2d_exact(x, w, None, ConvGeometry(), CostCounter())
        out_h = exact.shape[2]
        computed = perf.computed(out_h).tolist()
        for h in computed:
            assert np.array_equal(got[:, :, h], exact[:, :, h])
        for h in perf.skipped(out_h).tolist():
            below = [c for c in computed if c < h]
            above = [c for c in computed if c > h]
            if below and above:
                want = (exact[:, :, below[-1]] + exact[:, :, above[0]]) / 2.0
            elif below:
                want = exact[:, :, below[-1]]
            else:
                want = exact[:, :, above[0]]
            assert np.array_equal(got[:, :, h], want)

    def test_constant_input_exact_both_axes(self):
        rng = np.random.default_rng(8)
        for _ in range(60):
            n = int(rng.integers(1, 3))
            c = int(rng.integers(1, 4))
            k = int(rng.integers(1, 4))
            r = int(rng.integers(1, 4))
            s = int(rng.integers(1, 4))
            h = int(rng.integers(max(r, 2), 9))
            wd = int(rng.integers(max(s, 2), 9))
            x = np.broadcast_to(
                rng.normal(size=(n, c, 1, 1)).astype(np.float32), (n, c, h, wd)
            ).copy()
            w = rng.normal(size=(k, c, r, s)).astype(np.float32)
            geom = ConvGeometry(int(rng.integers(1, 3)), int(rng.integers(1, 3)), 0, 0)
            exact = ops.conv2d_exact(x, w, None, geom, CostCounter())
            axis = "row" if rng.random() < 0.5 else "col"
            stride = int(rng.integers(2, 5))
            offset = int(rng.integers(0, stride))
            extent = exact.shape[2] if axis == "row" else exact.shape[3]
            perf = PerforationSpec(axis, stride, offset)
            if perf.computed(extent).size == 0:
                continue
            got = ops.conv2d_perforated(x, w, None, geom, perf, CostCounter())
            assert np.array_equal(got, exact), (axis, stride, offset)

    def test_empty_skip_set_bit_identical(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 2, 6, 6)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        exact = ops.conv2d_exact(x, w, None, ConvGeometry(), CostCounter())
        out_h = exact.shape[2]
        perf = PerforationSpec("row", max(2, out_h), out_h)  # offset beyond range
        got = ops.conv2d_perforated(x, w, None, ConvGeometry(), perf, CostCounter())
        assert np.array_equal(got.view(np.uint32), exact.view(np.uint32))

    def test_mac_count_only_computed(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        for axis in ("row", "col"):
            for stride in (2, 3, 4):
                for offset in range(stride):
                    perf = PerforationSpec(axis, stride, offset)
                    c = CostCounter()
                    out = ops.conv2d_perforated(x, w, None, ConvGeometry(), perf, c)
                    n, k, oh, ow = out.shape
                    extent = oh if axis == "row" else ow
                    ncomp = perf.computed(extent).size
                    positions = ncomp * (ow if axis == "row" else oh)
                    assert c.macs == n * k * positions * 3 * 3 * 3

    def test_stride_below_two_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            PerforationSpec("row", 1, 0)

    def test_all_skipped_is_error(self):
        x = np.ones((1, 1, 2, 2), np.float32)
        w = np.ones((1, 1, 2, 2), np.float32)  # out 1x1
        with pytest.raises(ValueError, match="skips every row"):
            ops.conv2d_perforated(
                x, w, None, ConvGeometry(), PerforationSpec("row", 2, 0), CostCounter()
            )


class TestInterpolate:
    def _tensor_with_rows(self, rows):
        t = np.zeros((1, 1, len(rows), 2), np.float32)
        for i, v in enumerate(rows):
            t[0, 0, i] = v
        return t

    def test_mean_of_neighbors(self):
        t = self._tensor_with_rows([1.0, 0.0, 3.0])
        out = ops.interpolate_skipped(t, PerforationSpec("row", 2, 1))
        assert np.all(out[0, 0, 1] == 2.0)

    def test_boundary_copy(self):
        t = self._tensor_with_rows([0.0, 5.0])
        out = ops.interpolate_skipped(t, PerforationSpec("row", 2, 0))
        assert np.all(out[0, 0, 0] == 5.0)

    def test_last_row_copies_down(self):
        rng = np.random.default_rng(12)
        t = rng.normal(size=(2, 3, 4, 5)).astype(np.float32)
        perf = PerforationSpec("row", 2, 1)  # rows 1,3 skipped
        out = ops.interpolate_skipped(t, perf)
        assert np.array_equal(out[:, :, 3], t[:, :, 2])
        assert np.array_equal(out[:, :, 1], (t[:, :, 0] + t[:, :, 2]) / 2.0)

    def test_columns_symmetric(self):
        rng = np.random.default_rng(13)
        t = rng.normal(size=(1, 2, 5, 4)).astype(np.float32)
        perf = PerforationSpec("col", 2, 1)
        out = ops.interpolate_skipped(t, perf)
        assert np.array_equal(out[:, :, :, 1], (t[:, :, :, 0] + t[:, :, :, 2]) / 2.0)
        assert np.array_equal(out[:, :, :, 3], t[:, :, :, 2])

    def test_all_skipped_error(self):
        t = np.ones((1, 1, 1, 3), np.float32)
        with pytest.raises(ValueError, match="row"):
            ops.interpolate_skipped(t, PerforationSpec("row", 2, 0))


class TestFilterSampling:
    def test_removed_set_example(self):
        # n_elm 27 (C=3,R=3,S=3), stride 2, offset 0
        samp = FilterSampleSpec(2, 0)
        assert samp.removed(27).tolist() == list(range(0, 27, 2))
        assert samp.removed_count(27) == 14
        assert samp.n_samp(27) == 13

    def test_removed_count_matches_enumeration(self):
        rng = np.random.default_rng(20)
        for _ in range(1000):
            n_elm = int(rng.integers(1, 200))
            stride = int(rng.integers(2, 9))
            offset = int(rng.integers(0, 2 * n_elm + 2))
            samp = FilterSampleSpec(stride, offset)
            assert samp.removed_count(n_elm) == removed_count_enum(n_elm, stride, offset)

    def test_identity_case_bit_exact(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(1, 3, 5, 5)).astype(np.float32)
        w = rng.normal(size=(2, 3, 3, 3)).astype(np.float32)
        exact = ops.conv2d_exact(x, w, None, ConvGeometry(), CostCounter())
        got = ops.conv2d_filter_sampled(
            x, w, None, ConvGeometry(), FilterSampleSpec(2, 10_000), CostCounter()
        )
        assert np.array_equal(got.view(np.uint32), exact.view(np.uint32))

    def test_constant_receptive_field_exactness(self):
        # constant filter and constant input: rescale compensates the removal
        x = np.full((1, 3, 6, 6), 0.75, np.float32)
        w = np.full((2, 3, 3, 3), -0.5, np.float32)
        exact = ops.conv2d_exact(x, w, None, ConvGeometry(), CostCounter())
        for stride in (2, 3, 4):
            for offset in range(stride):
                got = ops.conv2d_filter_sampled(
                    x, w, None, ConvGeometry(), FilterSampleSpec(stride, offset), CostCounter()
                )
                assert np.max(np.abs(got - exact)) <= 1e-6 * np.max(np.abs(exact))

    def test_equals_masked_rescaled_exact_conv(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=(2, 2, 5, 5)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        samp = FilterSampleSpec(3, 1)
        n_elm = 2 * 3 * 3
        w_mod = w.reshape(3, n_elm) * np.float32(n_elm / samp.n_samp(n_elm))
        w_mod[:, samp.removed(n_elm)] = 0.0
        want = ops.conv2d_exact(x, w_mod.reshape(3, 2, 3, 3), None, ConvGeometry(), CostCounter())
        got = ops.conv2d_filter_sampled(x, w, None, ConvGeometry(), samp, CostCounter())
        assert np.array_equal(got, want)

    def test_mac_count(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        samp = FilterSampleSpec(2, 1)
        c = CostCounter()
        out = ops.conv2d_filter_sampled(x, w, None, ConvGeometry(), samp, c)
        n, k, oh, ow = out.shape
        assert c.macs == n * k * oh * ow * samp.n_samp(27)

    def test_all_removed_is_error(self):
        x = np.ones((1, 1, 2, 2), np.float32)
        w = np.ones((1, 1, 1, 1), np.float32)  # n_elm == 1
        with pytest.raises(ValueError, match="removes"):
            ops.conv2d_filter_sampled(
                x, w, None, ConvGeometry(), FilterSampleSpec(2, 0), CostCounter()
            )


class TestDense:
    def test_identity(self):
        x = np.asarray([[1.0, 2.0], [3.0, 4.0]], np.float32)
        out = ops.dense(x, np.eye(2, dtype=np.float32), np.zeros(2, np.float32), CostCounter())
        assert np.array_equal(out, x)

    def test_worked_example(self):
        # 1*3 + 2*4 + 5
        out = ops.dense(
            np.asarray([[1.0, 2.0]], np.float32),
            np.asarray([[3.0, 4.0]], np.float32),
            np.asarray([5.0], np.float32),
            CostCounter(),
        )
        assert out.tolist() == [[16.0]]

    def test_matches_oracle(self):
        rng = np.random.default_rng(30)
        for _ in range(100):
            n, f, g = (int(rng.integers(1, 6)) for _ in range(3))
            x = rng.normal(size=(n, f)).astype(np.float32)
            w = rng.normal(size=(g, f)).astype(np.float32)
            b = rng.normal(size=g).astype(np.float32)
            got = ops.dense(x, w, b, CostCounter())
            assert rel_close(got, matmul_direct(x, w, b), 1e-6)

    def test_mac_count(self):
        c = CostCounter()
        ops.dense(np.zeros((4, 8), np.float32), np.zeros((3, 8), np.float32), None, c)
        assert c.macs == 4 * 3 * 8

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.dense(np.zeros((2, 3), np.float32), np.zeros((4, 5), np.float32), None, CostCounter())


class TestActivationAndBatchNorm:
    def test_relu(self):
        out = ops.activation(np.asarray([-1.0, 0.0, 2.0], np.float32), "relu", CostCounter())
        assert out.tolist() == [0.0, 0.0, 2.0]

    def test_clipped_relu(self):
        out = ops.activation(
            np.asarray([7.0, 3.0, -1.0], np.float32), "clipped_relu", CostCounter(), clip=6.0
        )
        assert out.tolist() == [6.0, 3.0, 0.0]

    def test_tanh_zero(self):
        assert ops.activation(np.zeros(1, np.float32), "tanh", CostCounter()).tolist() == [0.0]

    def test_clip_must_be_positive(self):
        with pytest.raises(ValueError):
            ops.activation(np.zeros(1, np.float32), "clipped_relu", CostCounter(), clip=0.0)

    def test_bn_identity_params(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
        ones = np.ones(3, np.float32)
        zeros = np.zeros(3, np.float32)
        out = ops.batch_norm(x, ones, zeros, zeros, ones, 1e-12, CostCounter())
        assert np.max(np.abs(out - x)) <= 1e-6

    def test_bn_at_mean_returns_beta(self):
        mean = np.asarray([2.0, -1.0], np.float32)
        beta = np.asarray([0.5, 4.0], np.float32)
        x = np.broadcast_to(mean[None, :, None, None], (1, 2, 3, 3)).copy()
        out = ops.batch_norm(
            x, np.ones(2, np.float32), beta, mean, np.ones(2, np.float32), 1e-5, CostCounter()
        )
        for ch in range(2):
            assert np.all(out[:, ch] == beta[ch])

    def test_bn_matches_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(100):
            c = int(rng.integers(1, 4))
            x = rng.normal(size=(2, c, 3, 3)).astype(np.float32)
            gamma = rng.normal(size=c).astype(np.float32)
            beta = rng.normal(size=c).astype(np.float32)
            mean = rng.normal(size=c).astype(np.float32)
            var = rng.uniform(0.1, 2.0, size=c).astype(np.float32)
            got = ops.batch_norm(x, gamma, beta, mean, var, 1e-5, CostCounter())
            want = batch_norm_direct(x, gamma, beta, mean, var, 1e-5)
            assert rel_close(got, want, 1e-5)

    def test_bn_length_mismatch(self):
        with pytest.raises(ShapeError, match="gamma"):
            ops.batch_norm(
                np.zeros((1, 3, 2, 2), np.float32),
                np.ones(2, np.float32),
                np.zeros(3, np.float32),
                np.zeros(3, np.float32),
                np.ones(3, np.float32),
                1e-5,
                CostCounter(),
            )


class TestPool:
    def test_max_pool_worked(self):
        x = np.asarray([[[[1.0, 2.0], [3.0, 4.0]]]], np.float32)
        out = ops.pool(x, "max", 2, 2, CostCounter())
        assert out.tolist() == [[[[4.0]]]]

    def test_average_constant(self):
        x = np.full((1, 2, 4, 4), 3.25, np.float32)
        out = ops.pool(x, "average", 2, 2, CostCounter())
        assert np.all(out == 3.25)

    def test_min_matches_oracle(self):
        rng = np.random.default_rng(33)
        for kind in ("min", "max", "average"):
            for _ in range(40):
                x = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
                got = ops.pool(x, kind, 2, 2, CostCounter())
                want = pool_direct(x, kind, (2, 2), (2, 2))
                assert rel_close(got, want, 1e-6)

    def test_window_too_large(self):
        with pytest.raises(ShapeError, match="window"):
            ops.pool(np.zeros((1, 1, 2, 2), np.float32), "max", 3, 1, CostCounter())


class TestElementwise:
    def test_add_zero_identity(self):
        rng = np.random.default_rng(34)
        a = rng.normal(size=(2, 3)).astype(np.float32)
        assert np.array_equal(ops.elementwise_add(a, np.zeros_like(a), CostCounter()), a)

    def test_add_worked(self):
        out = ops.elementwise_add(
            np.asarray([1.0, 2.0], np.float32), np.asarray([3.0, 4.0], np.float32), CostCounter()
        )
        assert out.tolist() == [4.0, 6.0]

    def test_add_random_matches_loop(self):
        rng = np.random.default_rng(35)
        a = rng.normal(size=(3, 2)).astype(np.float32)
        b = rng.normal(size=(3, 2)).astype(np.float32)
        got = ops.elementwise_add(a, b, CostCounter())
        for i in range(3):
            for j in range(2):
                assert got[i, j] == np.float32(a[i, j] + b[i, j])

    def test_bias_add_broadcast(self):
        x = np.zeros((1, 2, 2, 2), np.float32)
        out = ops.bias_add(x, np.asarray([1.0, -1.0], np.float32), CostCounter())
        assert np.all(out[:, 0] == 1.0) and np.all(out[:, 1] == -1.0)

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.elementwise_add(np.zeros(2, np.float32), np.zeros(3, np.float32), CostCounter())


class TestSoftmaxT:
    def test_symmetric(self):
        for t in (0.1, 1.0, 7.0):
            out = ops.softmax_t(np.asarray([[0.0, 0.0]]), t)
            assert out.tolist() == [[0.5, 0.5]]

    def test_closed_form(self):
        out = ops.softmax_t(np.asarray([[np.log(2.0), 0.0]]), 1.0)
        assert abs(out[0, 0] - 2.0 / 3.0) < 1e-7
        assert abs(out[0, 1] - 1.0 / 3.0) < 1e-7

    def test_t1_equals_standard(self):
        rng = np.random.default_rng(36)
        z = rng.normal(size=(20, 5))
        got = ops.softmax_t(z, 1.0)
        want = softmax_direct(z, 1.0)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(37)
        for t in (0.05, 0.5, 1.0, 3.0, 20.0):
            z = rng.normal(0, 5, size=(50, 7))
            out = ops.softmax_t(z, t)
            assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-6

    def test_entries_strictly_inside_unit_interval(self):
        # in the non-underflowing regime every probability is in (0, 1)
        rng = np.random.default_rng(40)
        for t in (0.5, 1.0, 3.0, 20.0):
            z = rng.normal(0, 5, size=(50, 7))
            out = ops.softmax_t(z, t)
            assert np.all(out > 0) and np.all(out < 1)

    def test_argmax_invariant_under_t(self):
        rng = np.random.default_rng(38)
        z = rng.normal(0, 3, size=(100, 6))
        base = np.argmax(z, axis=1)
        for t in (0.05, 0.3, 1.0, 5.0, 20.0):
            assert np.array_equal(np.argmax(ops.softmax_t(z, t), axis=1), base)

    def test_entropy_monotone_in_t(self):
        rng = np.random.default_rng(39)
        for _ in range(50):
            z = rng.normal(0, 3, size=(1, 6))
            temps = [0.1, 0.5, 1.0, 2.0, 8.0]
            ents = [entropy(ops.softmax_t(z, t)[0].tolist()) for t in temps]
            for e1, e2 in zip(ents, ents[1:]):
                assert e2 >= e1 - 1e-9

    def test_nonpositive_t_rejected(self):
        with pytest.raises(ValueError):
            ops.softmax_t(np.zeros((1, 2)), 0.0)
