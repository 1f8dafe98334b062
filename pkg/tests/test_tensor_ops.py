import numpy as np
import pytest

from ctxseg import functional as F
from ctxseg.autodiff import Tensor, parameter
from ctxseg.functional import RunningStats, ShapeError


def conv2d_oracle(x, w, stride=1, padding=0, dilation=1):
    """Direct six-loop reference convolution."""
    n, c_in, h, wid = x.shape
    c_out, _, kh, kw = w.shape
    out_h = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    out_w = (wid + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    xp = np.zeros((n, c_in, h + 2 * padding, wid + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wid] = x
    out = np.zeros((n, c_out, out_h, out_w))
    for b in range(n):
        for co in range(c_out):
            for oy in range(out_h):
                for ox in range(out_w):
                    acc = 0.0
                    for ci in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (xp[b, ci, oy * stride + i * dilation,
                                           ox * stride + j * dilation]
                                        * w[co, ci, i, j])
                    out[b, co, oy, ox] = acc
    return out


class TestConv2d:
    def test_box_sum_geometry(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = F.conv2d(x, w, padding=1).numpy()
        assert out[0, 0, 1, 1] == 9
        assert out[0, 0, 0, 0] == 4

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 1, 4, 4)))
        w = Tensor(np.array([[[[1.0]]]]))
        np.testing.assert_array_equal(F.conv2d(x, w).numpy(), x.numpy())

    def test_dilated_matches_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        got = F.conv2d(Tensor(x), Tensor(w), dilation=2, padding=2).numpy()
        np.testing.assert_allclose(got, conv2d_oracle(x, w, padding=2, dilation=2),
                                   atol=1e-12)

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (2, 1, 1), (1, 2, 2)])
    def test_random_matches_oracle(self, stride, padding, dilation):
        rng = np.random.default_rng(stride * 10 + padding + dilation)
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                       padding=padding, dilation=dilation).numpy()
        want = conv2d_oracle(x, w, stride, padding, dilation) + b[None, :, None, None]
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("d", [2, 4])
    def test_dilation_equals_zero_inflated_kernel(self, d):
        rng = np.random.default_rng(d)
        x = rng.standard_normal((1, 2, 16, 16))
        w = rng.standard_normal((3, 2, 3, 3))
        winf = np.zeros((3, 2, 2 * d + 1, 2 * d + 1))
        winf[:, :, ::d, ::d] = w
        a = F.conv2d(Tensor(x), Tensor(w), padding=d, dilation=d).numpy()
        b = F.conv2d(Tensor(x), Tensor(winf), padding=d, dilation=1).numpy()
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 3, 5, 5)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ShapeError, match="channels"):
            F.conv2d(x, w)

    def test_kernel_larger_than_input_raises(self):
        x = Tensor(np.zeros((1, 1, 3, 3)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ShapeError, match="height"):
            F.conv2d(x, w, dilation=2)


class TestLinear:
    def test_identity(self):
        out = F.linear(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]),
                       Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.numpy(), [[1.0, 2.0]])

    def test_small_case(self):
        out = F.linear(Tensor([[1.0, 1.0]]), Tensor([[2.0, 3.0]]), Tensor([5.0]))
        assert out.numpy()[0, 0] == 10.0

    def test_matches_double_loop(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((4, 7))
        w = rng.standard_normal((3, 7))
        b = rng.standard_normal(3)
        want = np.empty((4, 3))
        for n in range(4):
            for j in range(3):
                want[n, j] = sum(x[n, i] * w[j, i] for i in range(7)) + b[j]
        got = F.linear(Tensor(x), Tensor(w), Tensor(b)).numpy()
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            F.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestBatchnorm:
    def test_two_values(self):
        x = Tensor(np.array([[1.0], [3.0]]))
        g, b = Tensor(np.ones(1)), Tensor(np.zeros(1))
        out = F.batchnorm(x, g, b, RunningStats(1), eps=0.0).numpy()
        np.testing.assert_allclose(out.ravel(), [-1.0, 1.0], atol=1e-12)

    def test_constant_channel(self):
        x = Tensor(np.full((4, 1, 2, 2), 3.7))
        out = F.batchnorm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
                          RunningStats(1), eps=1e-5).numpy()
        assert np.abs(out).max() < 1e-3

    def test_output_moments(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((8, 4, 6, 6)))
        out = F.batchnorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)),
                          RunningStats(4), eps=1e-12).numpy()
        assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-6
        assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4

    def test_population_of_one_raises(self):
        x = Tensor(np.zeros((1, 3)))
        with pytest.raises(ValueError, match="population"):
            F.batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), RunningStats(3))

    def test_eval_uses_running_stats(self):
        rs = RunningStats(2, momentum=1.0)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((16, 2))
        F.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rs)
        y = F.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rs,
                        eps=0.0, training=False).numpy()
        want = (x - x.mean(axis=0)) / np.sqrt(x.var(axis=0))
        np.testing.assert_allclose(y, want, atol=1e-10)


class TestActivations:
    def test_sigmoid_zero(self):
        assert F.sigmoid(Tensor(np.array([0.0]))).numpy()[0] == 0.5

    def test_sigmoid_extreme_is_finite(self):
        out = F.sigmoid(Tensor(np.array([-1000.0, 1000.0]))).numpy()
        assert np.isfinite(out).all()
        assert out[0] == 0.0 and out[1] == 1.0

    def test_softmax_symmetry(self):
        out = F.softmax(Tensor(np.array([[2.0, 2.0, 2.0]])), axis=1).numpy()
        np.testing.assert_allclose(out, [[1 / 3] * 3], atol=1e-15)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((5, 7, 3)) * 50)
        for axis in range(3):
            s = F.softmax(x, axis=axis).numpy().sum(axis=axis)
            np.testing.assert_allclose(s, np.ones_like(s), atol=1e-12)

    def test_relu(self):
        out = F.relu(Tensor(np.array([-2.0, 0.0, 3.0]))).numpy()
        np.testing.assert_array_equal(out, [0.0, 0.0, 3.0])


def bilinear_oracle(x, out_h, out_w):
    n, c, h, w = x.shape
    out = np.empty((n, c, out_h, out_w))
    for oy in range(out_h):
        sy = oy * (h - 1) / (out_h - 1) if out_h > 1 else 0.0
        y0 = min(int(np.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = ox * (w - 1) / (out_w - 1) if out_w > 1 else 0.0
            x0 = min(int(np.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = x[:, :, y0, x0] * (1 - fx) + x[:, :, y0, x1] * fx
            bot = x[:, :, y1, x0] * (1 - fx) + x[:, :, y1, x1] * fx
            out[:, :, oy, ox] = top * (1 - fy) + bot * fy
    return out


class TestBilinearResize:
    def test_same_size_is_copy(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 4, 5))
        np.testing.assert_array_equal(F.bilinear_resize(Tensor(x), 4, 5).numpy(), x)

    def test_center_of_upsampled_2x2(self):
        x = Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
        out = F.bilinear_resize(x, 3, 3).numpy()
        assert out[0, 0, 1, 1] == 1.5
        # align-corners: corner pixels map exactly
        assert out[0, 0, 0, 0] == 0.0 and out[0, 0, 2, 2] == 3.0

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 1, 4, 4))
        got = F.bilinear_resize(Tensor(x), 7, 5).numpy()
        np.testing.assert_allclose(got, bilinear_oracle(x, 7, 5), atol=1e-12)

    def test_constant_stays_constant(self):
        x = Tensor(np.full((1, 1, 3, 3), 2.5))
        out = F.bilinear_resize(x, 9, 6).numpy()
        np.testing.assert_allclose(out, 2.5, atol=1e-12)


class TestLosses:
    def test_confident_pixel_near_zero_loss(self):
        logits = np.zeros((1, 3, 1, 1))
        logits[0, 2] = 20.0
        loss = F.cross_entropy_2d(Tensor(logits), np.array([[[2]]]), ignore_label=255)
        assert loss.item() < 1e-6

    def test_bce_half_prob_is_ln2(self):
        probs = Tensor(np.full((2, 3), 0.5))
        tgt = np.array([[0, 1, 0], [1, 1, 0]], dtype=float)
        assert abs(F.binary_cross_entropy(probs, tgt).item() - np.log(2)) < 1e-12

    def test_ce_matches_logsumexp_oracle(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((2, 5, 3, 3)) * 3
        tgt = rng.integers(0, 5, (2, 3, 3))
        tgt[0, 0, 0] = 255  # one ignored pixel
        got = F.cross_entropy_2d(Tensor(logits), tgt, ignore_label=255).item()
        total, count = 0.0, 0
        for n in range(2):
            for y in range(3):
                for x in range(3):
                    if tgt[n, y, x] == 255:
                        continue
                    z = logits[n, :, y, x]
                    total += np.log(np.exp(z).sum()) - z[tgt[n, y, x]]
                    count += 1
        assert abs(got - total / count) < 1e-10

    def test_bce_matches_formula_oracle(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(0.01, 0.99, (3, 4))
        t = rng.integers(0, 2, (3, 4)).astype(float)
        got = F.binary_cross_entropy(Tensor(p), t).item()
        want = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
        assert abs(got - want) < 1e-10

    def test_all_ignored_raises(self):
        logits = Tensor(np.zeros((1, 2, 2, 2)))
        with pytest.raises(ValueError, match="ignore"):
            F.cross_entropy_2d(logits, np.full((1, 2, 2), 9), ignore_label=9)

    def test_out_of_range_label_raises(self):
        logits = Tensor(np.zeros((1, 2, 2, 2)))
        tgt = np.array([[[0, 1], [5, 0]]])
        with pytest.raises(ValueError, match="pixel"):
            F.cross_entropy_2d(logits, tgt, ignore_label=255)


class TestChannelScale:
    def test_ratio_constancy(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 3, 4, 4)) + 5
        gamma = rng.uniform(0.1, 0.9, (2, 3))
        y = F.channel_scale(Tensor(x), Tensor(gamma)).numpy()
        ratio = y / x
        for n in range(2):
            for c in range(3):
                np.testing.assert_allclose(ratio[n, c], gamma[n, c], atol=1e-12)


class TestTensorBasics:
    def test_shape_mismatch_add(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            Tensor(np.zeros(3)) + Tensor(np.zeros(4))

    def test_backward_accumulates_in_graph_order(self):
        x = parameter([2.0])
        y = x * 3.0 + x * x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [3.0 + 4.0])

    def test_mean_over_axes(self):
        x = parameter(np.arange(24, dtype=float).reshape(2, 3, 4))
        m = x.mean(axis=(0, 2))
        np.testing.assert_allclose(m.numpy(), x.numpy().mean(axis=(0, 2)))
        m.sum().backward()
        np.testing.assert_allclose(x.grad, np.full((2, 3, 4), 1 / 8))
