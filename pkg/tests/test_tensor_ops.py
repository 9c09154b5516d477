"""Forward-value contracts of the numerics ops against loop oracles."""

import numpy as np
import pytest

from flowdet.numerics import (
    GruParams, ShapeError, Tensor, avgpool2x, bilinear_sample, conv2d, gru_cell, tsum,
    upsample2x,
)

import oracles


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = Tensor(rng.standard_normal((5, 5, 3)))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0] = np.eye(3)
        out = conv2d(x, Tensor(w), stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_input_zero_output(self, rng):
        x = Tensor(np.zeros((4, 6, 2)))
        w = Tensor(rng.standard_normal((3, 3, 2, 5)))
        out = conv2d(x, w, stride=1, padding=1)
        np.testing.assert_array_equal(out.data, np.zeros((4, 6, 5)))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_matches_loop_oracle(self, rng, stride, padding):
        x = rng.standard_normal((5, 5, 2))
        w = rng.standard_normal((3, 3, 2, 4))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        ref = oracles.conv2d_loops(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-12)

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ShapeError, match="odd"):
            conv2d(Tensor(rng.standard_normal((4, 4, 2))), Tensor(rng.standard_normal((2, 2, 2, 1))))

    def test_channel_mismatch_names_both_shapes(self, rng):
        with pytest.raises(ShapeError, match=r"\(4, 4, 2\).*\(3, 3, 3, 1\)"):
            conv2d(Tensor(rng.standard_normal((4, 4, 2))), Tensor(rng.standard_normal((3, 3, 3, 1))))

    def test_output_extent_formula(self, rng):
        x = Tensor(rng.standard_normal((9, 7, 1)))
        w = Tensor(rng.standard_normal((3, 3, 1, 1)))
        out = conv2d(x, w, stride=2, padding=1)
        assert out.shape == ((9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1, 1)

    def test_linear_in_inputs(self, rng):
        x = rng.standard_normal((5, 5, 2))
        y = rng.standard_normal((5, 5, 2))
        w = Tensor(rng.standard_normal((3, 3, 2, 3)))
        a_coef, b_coef = 1.7, -2.3
        lhs = conv2d(Tensor(a_coef * x + b_coef * y), w, stride=1, padding=1).data
        rhs = a_coef * conv2d(Tensor(x), w, stride=1, padding=1).data \
            + b_coef * conv2d(Tensor(y), w, stride=1, padding=1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestBilinearSample:
    def test_integer_coords_exact(self, rng):
        src = rng.standard_normal((4, 5, 3))
        coords = np.array([[0.0, 0.0], [4.0, 3.0], [2.0, 1.0]])
        out = bilinear_sample(Tensor(src), Tensor(coords))
        np.testing.assert_array_equal(out.data[0], src[0, 0])
        np.testing.assert_array_equal(out.data[1], src[3, 4])
        np.testing.assert_array_equal(out.data[2], src[1, 2])

    def test_center_of_2x2(self):
        src = np.arange(4.0).reshape(2, 2, 1)
        out = bilinear_sample(Tensor(src), Tensor(np.array([[0.5, 0.5]])))
        assert out.data[0, 0] == pytest.approx(1.5)

    def test_matches_point_oracle(self, rng):
        src = rng.standard_normal((5, 6, 2))
        coords = rng.uniform(-1.0, 6.5, size=(40, 2))
        out = bilinear_sample(Tensor(src), Tensor(coords))
        ref = np.stack([oracles.bilinear_point(src, cx, cy) for cx, cy in coords])
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    def test_nan_coords_rejected(self, rng):
        src = Tensor(rng.standard_normal((3, 3, 1)))
        with pytest.raises(ValueError, match="non-finite"):
            bilinear_sample(src, Tensor(np.array([[np.nan, 0.0]])))

    def test_linear_in_values(self, rng):
        x = rng.standard_normal((4, 4, 2))
        y = rng.standard_normal((4, 4, 2))
        coords = Tensor(rng.uniform(0, 3, size=(9, 2)))
        lhs = bilinear_sample(Tensor(2.0 * x + 0.5 * y), coords).data
        rhs = 2.0 * bilinear_sample(Tensor(x), coords).data + 0.5 * bilinear_sample(Tensor(y), coords).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def _gru_params(rng, cm, ci, k=3, saturate_z=None):
    def w():
        return Tensor(rng.standard_normal((k, k, cm + ci, cm)) * 0.4)

    bz = np.zeros(cm) if saturate_z is None else np.full(cm, saturate_z)
    params = GruParams(wz=w(), bz=Tensor(bz), wr=w(), br=Tensor(np.zeros(cm)),
                       wh=w(), bh=Tensor(np.zeros(cm)))
    if saturate_z is not None:
        params.wz.data = np.zeros_like(params.wz.data)
    return params


class TestGruCell:
    def test_closed_update_gate_keeps_hidden(self, rng):
        params = _gru_params(rng, 2, 3, saturate_z=-800.0)  # exp underflows: z == 0 exactly
        h = Tensor(rng.standard_normal((4, 4, 2)))
        x = Tensor(rng.standard_normal((4, 4, 3)))
        out = gru_cell(h, x, params)
        np.testing.assert_array_equal(out.data, h.data)

    def test_open_gate_zero_candidate_zeroes_hidden(self, rng):
        params = _gru_params(rng, 2, 3, saturate_z=800.0)  # z == 1 exactly
        params.wh.data = np.zeros_like(params.wh.data)    # candidate == 0
        h = Tensor(rng.standard_normal((4, 4, 2)))
        x = Tensor(rng.standard_normal((4, 4, 3)))
        out = gru_cell(h, x, params)
        np.testing.assert_allclose(out.data, np.zeros_like(h.data), atol=1e-15)

    def test_matches_scalar_oracle_with_1x1_kernels(self, rng):
        cm, ci = 3, 2
        params = _gru_params(rng, cm, ci, k=1)
        h = rng.standard_normal((5, 4, cm))
        x = rng.standard_normal((5, 4, ci))
        out = gru_cell(Tensor(h), Tensor(x), params)
        ref = oracles.gru_scalar(h, x,
                                 params.wz.data[0, 0], params.bz.data,
                                 params.wr.data[0, 0], params.br.data,
                                 params.wh.data[0, 0], params.bh.data)
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    def test_output_bounded_by_hidden_and_unit_interval(self, rng):
        # convex blend of h and tanh keeps values inside [min(h,-1), max(h,1)]
        for trial in range(10):
            params = _gru_params(rng, 2, 2)
            h = rng.standard_normal((5, 5, 2)) * 3
            x = rng.standard_normal((5, 5, 2)) * 3
            out = gru_cell(Tensor(h), Tensor(x), params).data
            assert np.all(out >= np.minimum(h, -1.0) - 1e-12)
            assert np.all(out <= np.maximum(h, 1.0) + 1e-12)

    def test_spatial_misalignment_rejected(self, rng):
        params = _gru_params(rng, 2, 2)
        with pytest.raises(ShapeError, match="aligned"):
            gru_cell(Tensor(rng.standard_normal((4, 4, 2))), Tensor(rng.standard_normal((3, 4, 2))), params)


class TestUpsample2x:
    def test_constant_preserved(self):
        x = Tensor(np.full((3, 3, 2), 7.0))
        for mode in ("nearest", "bilinear"):
            out = upsample2x(x, mode)
            assert out.shape == (6, 6, 2)
            np.testing.assert_allclose(out.data, 7.0)

    def test_single_pixel(self):
        out = upsample2x(Tensor(np.array([[[3.5]]])), "nearest")
        np.testing.assert_array_equal(out.data, np.full((2, 2, 1), 3.5))
        out = upsample2x(Tensor(np.array([[[3.5]]])), "bilinear")
        np.testing.assert_array_equal(out.data, np.full((2, 2, 1), 3.5))

    def test_bilinear_matches_per_pixel_oracle(self, rng):
        x = rng.standard_normal((3, 3, 2))
        out = upsample2x(Tensor(x), "bilinear")
        for i in range(6):
            for j in range(6):
                sx = j * (3 - 1) / (6 - 1)
                sy = i * (3 - 1) / (6 - 1)
                np.testing.assert_allclose(out.data[i, j], oracles.bilinear_point(x, sx, sy), atol=1e-12)

    def test_nearest_then_even_subsample_is_identity(self, rng):
        x = rng.standard_normal((4, 7, 3))
        out = upsample2x(Tensor(x), "nearest")
        np.testing.assert_array_equal(out.data[::2, ::2], x)

    def test_avgpool_blocks(self, rng):
        x = rng.standard_normal((4, 6, 2))
        out = avgpool2x(Tensor(x))
        np.testing.assert_allclose(out.data[1, 2], x[2:4, 4:6].mean(axis=(0, 1)), atol=1e-12)


def test_backward_accumulates_through_shared_inputs(rng):
    x = Tensor(rng.standard_normal((3, 3, 2)), requires_grad=True)
    w = Tensor(rng.standard_normal((1, 1, 2, 2)), requires_grad=True)
    a = conv2d(x, w)
    total = tsum(a)
    total.backward()
    assert x.grad is not None and x.grad.shape == x.shape
    assert w.grad is not None and np.isfinite(w.grad).all()
