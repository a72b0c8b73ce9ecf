import numpy as np
import pytest

from pulsekin.errors import ConfigError, ShapeError
from pulsekin.layers import (
    conv1d_backward,
    conv1d_forward,
    conv1d_out_len,
    dropout,
    dropout_backward,
    gap1d,
    gap1d_backward,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
)
from pulsekin.seeding import rng_for

H = 1e-5


def numeric_grad(f, x, h=H):
    """Central finite differences of a scalar function w.r.t. array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def rel_err(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


class TestConv1d:
    def test_sum_window(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        w = np.ones((1, 1, 5))
        y = conv1d_forward(x, w, np.zeros(1))
        np.testing.assert_allclose(y, [[15.0]])

    def test_output_length_chain(self):
        for width in (16, 125, 300):
            l1 = conv1d_out_len(width, 5, 1)
            l2 = conv1d_out_len(l1, 5, 1)
            assert l2 == width - 8
        assert conv1d_out_len(125, 5, 1) == 121
        assert conv1d_out_len(121, 5, 1) == 117

    def test_delta_kernel_shifts_and_crops(self):
        rng = rng_for("delta")
        x = rng.standard_normal((1, 20))
        w = np.zeros((1, 1, 5))
        w[0, 0, 2] = 1.0  # delta at kernel center
        y = conv1d_forward(x, w, np.zeros(1))
        np.testing.assert_allclose(y[0], x[0, 2:-2])

    def test_too_short_input_raises(self):
        with pytest.raises(ShapeError):
            conv1d_forward(np.zeros((1, 3)), np.zeros((1, 1, 5)), np.zeros(1))

    def test_single_window_backward(self):
        x = rng_for("sw").standard_normal((1, 5))
        w = rng_for("sww").standard_normal((1, 1, 5))
        grads = conv1d_backward(np.ones((1, 1)), x, w)
        np.testing.assert_allclose(grads.d_weight[0, 0], x[0])
        np.testing.assert_allclose(grads.d_bias, [1.0])

    def test_zero_upstream_zero_grads(self):
        x = rng_for("zu").standard_normal((2, 10))
        w = rng_for("zuw").standard_normal((3, 2, 5))
        grads = conv1d_backward(np.zeros((3, 6)), x, w)
        assert not np.any(grads.d_input)
        assert not np.any(grads.d_weight)
        assert not np.any(grads.d_bias)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient_check(self, stride):
        for draw in range(30):
            rng = rng_for("convfd", stride, draw)
            c_in, c_out, width, k = 3, 4, 12, 5
            x = rng.standard_normal((c_in, width))
            w = rng.standard_normal((c_out, c_in, k))
            b = rng.standard_normal(c_out)
            proj = rng.standard_normal((c_out, conv1d_out_len(width, k, stride)))

            def loss(x=x, w=w, b=b):
                return float(np.sum(proj * conv1d_forward(x, w, b, stride)))

            grads = conv1d_backward(proj, x, w, stride)
            assert rel_err(grads.d_input, numeric_grad(lambda v: loss(x=v), x)) < 1e-6
            assert rel_err(grads.d_weight, numeric_grad(lambda v: loss(w=v), w)) < 1e-6
            assert rel_err(grads.d_bias, numeric_grad(lambda v: loss(b=v), b)) < 1e-6

    def test_batched_matches_per_sample(self):
        rng = rng_for("batch")
        x = rng.standard_normal((4, 3, 20))
        w = rng.standard_normal((2, 3, 5))
        b = rng.standard_normal(2)
        batched = conv1d_forward(x, w, b)
        for i in range(4):
            np.testing.assert_allclose(batched[i], conv1d_forward(x[i], w, b))


class TestRelu:
    def test_values(self):
        np.testing.assert_allclose(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_backward_subgradient_zero_at_zero(self):
        out = relu_backward(np.ones(3), np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_allclose(out, [0.0, 0.0, 1.0])

    def test_gradient_check_away_from_kink(self):
        for draw in range(30):
            rng = rng_for("relufd", draw)
            x = rng.standard_normal(40)
            x = x[np.abs(x) > 1e-4]  # exclude kink-adjacent coordinates
            up = rng.standard_normal(x.shape)
            analytic = relu_backward(up, x)
            numeric = numeric_grad(lambda v: float(np.sum(up * relu(v))), x)
            assert rel_err(analytic, numeric) < 1e-6


class TestGap1d:
    def test_mean(self):
        np.testing.assert_allclose(gap1d(np.array([[2.0, 4.0, 6.0]])), [4.0])

    def test_constant(self):
        np.testing.assert_allclose(gap1d(np.full((2, 7), 3.5)), [3.5, 3.5])

    def test_backward_distributes_uniformly(self):
        out = gap1d_backward(np.array([6.0]), 3)
        np.testing.assert_allclose(out, [[2.0, 2.0, 2.0]])

    def test_gradient_check(self):
        for draw in range(30):
            rng = rng_for("gapfd", draw)
            x = rng.standard_normal((3, 9))
            up = rng.standard_normal(3)
            analytic = gap1d_backward(up, 9)
            numeric = numeric_grad(lambda v: float(np.sum(up * gap1d(v))), x)
            assert rel_err(analytic, numeric) < 1e-8


class TestLinear:
    def test_identity(self):
        x = rng_for("lid").standard_normal(6)
        np.testing.assert_allclose(linear_forward(x, np.eye(6), np.zeros(6)), x)

    def test_weight_grad_is_outer_product(self):
        rng = rng_for("louter")
        x = rng.standard_normal(5)
        up = rng.standard_normal(3)
        grads = linear_backward(up, x, rng.standard_normal((3, 5)))
        np.testing.assert_allclose(grads.d_weight, np.outer(up, x))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            linear_forward(np.zeros(4), np.zeros((3, 5)), np.zeros(3))

    def test_gradient_check(self):
        for draw in range(30):
            rng = rng_for("linfd", draw)
            x = rng.standard_normal(7)
            w = rng.standard_normal((4, 7))
            b = rng.standard_normal(4)
            up = rng.standard_normal(4)

            def loss(x=x, w=w, b=b):
                return float(np.sum(up * linear_forward(x, w, b)))

            grads = linear_backward(up, x, w)
            assert rel_err(grads.d_input, numeric_grad(lambda v: loss(x=v), x)) < 1e-6
            assert rel_err(grads.d_weight, numeric_grad(lambda v: loss(w=v), w)) < 1e-6
            assert rel_err(grads.d_bias, numeric_grad(lambda v: loss(b=v), b)) < 1e-6


class TestSigmoid:
    def test_zero_maps_to_half(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_saturation_without_overflow(self):
        out = sigmoid(np.array([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        assert out[1] == pytest.approx(1.0, abs=1e-12)

    def test_outputs_strictly_inside_unit_interval(self):
        x = rng_for("sig").standard_normal(1000) * 10
        y = sigmoid(x)
        assert np.all(y > 0.0) and np.all(y < 1.0)

    def test_gradient_check(self):
        for draw in range(30):
            rng = rng_for("sigfd", draw)
            x = rng.standard_normal(20)
            up = rng.standard_normal(20)
            analytic = sigmoid_backward(up, sigmoid(x))
            numeric = numeric_grad(lambda v: float(np.sum(up * sigmoid(v))), x)
            assert rel_err(analytic, numeric) < 1e-6


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = rng_for("d0").standard_normal(50)
        for training in (True, False):
            y, mask = dropout(x, 0.0, training, rng_for("d0r"))
            np.testing.assert_array_equal(y, x)
            assert mask is None

    def test_eval_mode_is_identity(self):
        x = rng_for("de").standard_normal(50)
        y, mask = dropout(x, 0.1, training=False)
        np.testing.assert_array_equal(y, x)
        assert mask is None

    def test_training_statistics(self):
        x = np.abs(rng_for("ds").standard_normal(100_000)) + 1.0
        y, mask = dropout(x, 0.1, training=True, rng=rng_for("ds-mask"))
        zero_fraction = np.mean(~mask)
        assert zero_fraction == pytest.approx(0.1, abs=0.01)
        assert y.mean() == pytest.approx(x.mean(), rel=0.02)

    def test_mask_determinism(self):
        x = rng_for("dd").standard_normal(1000)
        y1, m1 = dropout(x, 0.3, True, rng_for("dd-mask"))
        y2, m2 = dropout(x, 0.3, True, rng_for("dd-mask"))
        np.testing.assert_array_equal(y1, y2)
        np.testing.assert_array_equal(m1, m2)

    def test_backward_routes_through_mask(self):
        x = rng_for("db").standard_normal(200)
        up = rng_for("db-up").standard_normal(200)
        y, mask = dropout(x, 0.25, True, rng_for("db-mask"))
        grad = dropout_backward(up, mask, 0.25)
        np.testing.assert_allclose(grad[~mask], 0.0)
        np.testing.assert_allclose(grad[mask], up[mask] / 0.75)

    def test_invalid_rate_raises(self):
        with pytest.raises(ConfigError):
            dropout(np.zeros(3), 1.0, True, rng_for("bad"))


class TestNumericHygiene:
    """Forward and backward stay finite for inputs up to |x| = 1e3."""

    def test_no_nan_anywhere(self):
        rng = rng_for("hyg")
        x = rng.uniform(-1e3, 1e3, (2, 3, 30))
        w = rng.uniform(-1e3, 1e3, (4, 3, 5))
        b = rng.uniform(-1e3, 1e3, 4)
        y = conv1d_forward(x, w, b)
        up = rng.uniform(-1e3, 1e3, y.shape)
        g = conv1d_backward(up, x, w)
        for arr in (y, g.d_input, g.d_weight, g.d_bias):
            assert np.all(np.isfinite(arr))
        assert np.all(np.isfinite(sigmoid(x)))
        assert np.all(np.isfinite(sigmoid_backward(up[..., :3, :26], sigmoid(x[..., :26]))))
        assert np.all(np.isfinite(relu(x)))
        assert np.all(np.isfinite(gap1d(x)))
        flat = x.reshape(2, -1)
        wf = rng.uniform(-1e3, 1e3, (5, flat.shape[1]))
        bf = rng.uniform(-1e3, 1e3, 5)
        yf = linear_forward(flat, wf, bf)
        gf = linear_backward(np.ones_like(yf), flat, wf)
        for arr in (yf, gf.d_input, gf.d_weight, gf.d_bias):
            assert np.all(np.isfinite(arr))
