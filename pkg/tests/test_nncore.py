import numpy as np
import pytest

from owleye.nncore import (SGD, BatchNorm, Conv2D, Dense, Flatten, MaxPool2x2,
                           ReLU, finite_diff_check, sgd_step, softmax,
                           softmax_cross_entropy)


def rng64(seed):
    return np.random.default_rng(seed)


class TestConvForward:
    def test_identity_kernel(self):
        conv = Conv2D(1, 1, rng64(0), dtype=np.float64)
        conv.w[:] = 0
        conv.w[0, 0, 1, 1] = 1.0
        conv.b[:] = 0
        x = rng64(1).normal(size=(2, 1, 4, 3))
        assert np.allclose(conv.forward(x, training=True), x)

    def test_all_ones_kernel_hand_sum(self):
        conv = Conv2D(1, 1, rng64(0), dtype=np.float64)
        conv.w[:] = 1.0
        conv.b[:] = 0
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = conv.forward(x, training=True)
        assert np.allclose(out, 10.0)  # every padded 3x3 window sums to 10

    def test_bias_only(self):
        conv = Conv2D(2, 3, rng64(0), dtype=np.float64)
        conv.w[:] = 0
        conv.b[:] = 5.0
        out = conv.forward(rng64(2).normal(size=(1, 2, 3, 3)), training=True)
        assert np.allclose(out, 5.0)

    def test_spatial_dims_preserved(self):
        conv = Conv2D(1, 2, rng64(0), dtype=np.float64)
        for h, w in [(1, 1), (2, 5), (7, 3), (10, 10)]:
            out = conv.forward(rng64(3).normal(size=(1, 1, h, w)), training=True)
            assert out.shape == (1, 2, h, w)

    def test_channel_mismatch_rejected(self):
        conv = Conv2D(3, 2, rng64(0), dtype=np.float64)
        with pytest.raises(ValueError):
            conv.forward(rng64(0).normal(size=(1, 2, 4, 4)), training=True)


class TestConvBackward:
    def test_zero_grad_out(self):
        conv = Conv2D(2, 2, rng64(4), dtype=np.float64)
        x = rng64(5).normal(size=(2, 2, 3, 3))
        conv.forward(x, training=True)
        dx = conv.backward(np.zeros((2, 2, 3, 3)))
        assert not dx.any() and not conv.dw.any() and not conv.db.any()

    def test_bias_grad_counts_positions(self):
        conv = Conv2D(1, 1, rng64(0), dtype=np.float64)
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        conv.forward(x, training=True)
        conv.backward(np.ones_like(x))
        assert conv.db[0] == pytest.approx(4.0)

    def test_matches_finite_differences(self):
        conv = Conv2D(3, 4, rng64(6), dtype=np.float64)
        x = rng64(7).normal(size=(2, 3, 4, 4))
        assert finite_diff_check(conv, x, eps=1e-5) < 1e-4

    def test_stale_cache_errors(self):
        conv = Conv2D(1, 1, rng64(0), dtype=np.float64)
        with pytest.raises(RuntimeError):
            conv.backward(np.zeros((1, 1, 2, 2)))


class TestBatchNorm:
    def test_unit_oracle_1_2_3(self):
        bn = BatchNorm(1, dtype=np.float64)
        out = bn.forward(np.array([[1.0], [2.0], [3.0]]), training=True)
        assert np.allclose(out.ravel(), [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_constant_input_gives_beta(self):
        bn = BatchNorm(2, dtype=np.float64)
        bn.beta[:] = [4.0, -1.0]
        out = bn.forward(np.full((3, 2), 7.0), training=True)
        assert np.allclose(out, [4.0, -1.0], atol=1e-6)

    def test_gamma_beta_affine(self):
        bn = BatchNorm(1, dtype=np.float64)
        bn.gamma[:] = 2.0
        bn.beta[:] = 1.0
        x = np.array([[-1.0], [0.0], [1.0]]) * np.sqrt(1.5)  # unit batch variance
        out = bn.forward(x, training=True)
        ref = BatchNorm(1, dtype=np.float64).forward(x, training=True)
        assert np.allclose(out, 2.0 * ref + 1.0)

    def test_training_output_standardized(self):
        bn = BatchNorm(3, dtype=np.float64)
        x = rng64(8).normal(loc=5.0, scale=3.0, size=(8, 3, 4, 4))
        out = bn.forward(x, training=True)
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert (np.abs(mean) < 1e-5).all()
        assert np.allclose(var, 1.0, atol=1e-3)  # off by eps-regularization only

    def test_running_stats_update_rule(self):
        bn = BatchNorm(1, momentum=0.1, dtype=np.float64)
        x = np.array([[1.0], [2.0], [3.0]])
        bn.forward(x, training=True)
        # r <- 0.9 * r + 0.1 * batch_stat, biased variance 2/3
        assert bn.running_mean[0] == pytest.approx(0.9 * 0.0 + 0.1 * 2.0)
        assert bn.running_var[0] == pytest.approx(0.9 * 1.0 + 0.1 * (2.0 / 3.0))

    def test_inference_uses_running_stats(self):
        bn = BatchNorm(1, dtype=np.float64)
        bn.running_mean[:] = 10.0
        bn.running_var[:] = 4.0
        out = bn.forward(np.array([[12.0]]), training=False)
        assert out[0, 0] == pytest.approx((12.0 - 10.0) / np.sqrt(4.0 + 1e-5))

    def test_inference_does_not_touch_running_stats(self):
        bn = BatchNorm(2, dtype=np.float64)
        bn.running_mean[:] = [1.0, 2.0]
        bn.running_var[:] = [3.0, 4.0]
        bn.forward(rng64(9).normal(size=(4, 2)), training=False)
        assert bn.running_mean.tolist() == [1.0, 2.0]
        assert bn.running_var.tolist() == [3.0, 4.0]

    def test_dbeta_is_grad_sum(self):
        bn = BatchNorm(2, dtype=np.float64)
        x = rng64(10).normal(size=(5, 2))
        bn.forward(x, training=True)
        g = rng64(11).normal(size=(5, 2))
        bn.backward(g)
        assert np.allclose(bn.dbeta, g.sum(axis=0))

    def test_zero_grad_out(self):
        bn = BatchNorm(2, dtype=np.float64)
        bn.forward(rng64(12).normal(size=(4, 2)), training=True)
        dx = bn.backward(np.zeros((4, 2)))
        assert not dx.any() and not bn.dgamma.any() and not bn.dbeta.any()

    def test_training_backward_finite_diff_2d(self):
        bn = BatchNorm(3, dtype=np.float64)
        x = rng64(13).normal(size=(4, 3))
        assert finite_diff_check(bn, x, training=True) < 1e-4

    def test_training_backward_finite_diff_4d(self):
        bn = BatchNorm(2, dtype=np.float64)
        x = rng64(14).normal(size=(3, 2, 4, 4))
        assert finite_diff_check(bn, x, training=True) < 1e-4

    def test_inference_backward_finite_diff(self):
        bn = BatchNorm(3, dtype=np.float64)
        bn.running_mean[:] = [0.5, -0.2, 1.0]
        bn.running_var[:] = [1.5, 0.7, 2.0]
        x = rng64(15).normal(size=(4, 3))
        assert finite_diff_check(bn, x, training=False) < 1e-4

    def test_running_var_nonnegative_over_time(self):
        bn = BatchNorm(2, dtype=np.float64)
        for seed in range(5):
            bn.forward(rng64(seed).normal(size=(6, 2)), training=True)
            assert (bn.running_var >= 0).all()


class TestReLU:
    def test_thresholding(self):
        relu = ReLU()
        out = relu.forward(np.array([-1.0, 0.0, 2.0]), training=True)
        assert out.tolist() == [0.0, 0.0, 2.0]

    def test_backward_mask(self):
        relu = ReLU()
        relu.forward(np.array([-1.0, 0.0, 2.0]), training=True)
        assert relu.backward(np.array([5.0, 5.0, 5.0])).tolist() == [0.0, 0.0, 5.0]

    def test_all_positive_identity(self):
        relu = ReLU()
        x = np.abs(rng64(16).normal(size=(3, 3))) + 0.1
        assert (relu.forward(x, training=True) == x).all()

    def test_finite_diff_away_from_kink(self):
        relu = ReLU()
        x = rng64(17).normal(size=(3, 4))
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # probe away from 0
        assert finite_diff_check(relu, x, eps=1e-5) < 1e-6


class TestMaxPool:
    def test_hand_max(self):
        pool = MaxPool2x2()
        out = pool.forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), training=True)
        assert out.reshape(-1).tolist() == [4.0]

    def test_tie_routes_to_first_row_major(self):
        pool = MaxPool2x2()
        pool.forward(np.ones((1, 1, 2, 2)), training=True)
        dx = pool.backward(np.array([[[[1.0]]]]))
        assert dx.reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]

    def test_zero_backward(self):
        pool = MaxPool2x2()
        pool.forward(rng64(18).normal(size=(2, 2, 4, 4)), training=True)
        assert not pool.backward(np.zeros((2, 2, 2, 2))).any()

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError):
            MaxPool2x2().forward(np.zeros((1, 1, 3, 4)), training=True)

    def test_gradient_conservation(self):
        pool = MaxPool2x2()
        x = rng64(19).normal(size=(2, 3, 4, 6))
        pool.forward(x, training=True)
        g = rng64(20).normal(size=(2, 3, 2, 3))
        dx = pool.backward(g)
        assert dx.sum() == pytest.approx(g.sum())

    def test_finite_diff(self):
        pool = MaxPool2x2()
        x = rng64(21).normal(size=(2, 2, 4, 4))
        assert finite_diff_check(pool, x) < 1e-4


class TestDense:
    def test_identity_weights(self):
        fc = Dense(2, 2, rng64(22), dtype=np.float64)
        fc.w[:] = np.eye(2)
        fc.b[:] = 0
        x = rng64(23).normal(size=(3, 2))
        assert np.allclose(fc.forward(x, training=True), x)

    def test_hand_matmul(self):
        fc = Dense(2, 2, rng64(24), dtype=np.float64)
        fc.w[:] = np.eye(2)
        fc.b[:] = [3.0, 4.0]
        out = fc.forward(np.array([[1.0, 2.0]]), training=True)
        assert out.tolist() == [[4.0, 6.0]]

    def test_shape_mismatch(self):
        fc = Dense(3, 2, rng64(25), dtype=np.float64)
        with pytest.raises(ValueError):
            fc.forward(np.zeros((1, 4)), training=True)

    def test_linear_layer_near_exact_finite_diff(self):
        fc = Dense(4, 3, rng64(26), dtype=np.float64)
        x = rng64(27).normal(size=(2, 4))
        assert finite_diff_check(fc, x, eps=1e-5) < 1e-8


class TestSoftmaxCrossEntropy:
    def test_symmetric_logits(self):
        assert np.allclose(softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]])

    def test_two_zero_oracle(self):
        probs = softmax(np.array([[2.0, 0.0]]))
        assert np.allclose(probs, [[0.8808, 0.1192]], atol=1e-4)

    def test_rows_sum_to_one(self):
        logits = rng64(28).normal(size=(10, 5)) * 20
        probs = softmax(logits)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_shift_invariance_exact(self):
        logits = rng64(29).normal(size=(4, 3))
        shifted = logits + 123.456
        assert np.abs(softmax(logits) - softmax(shifted)).max() < 1e-9

    def test_extreme_logits_stable(self):
        probs = softmax(np.array([[1000.0, 0.0], [-1000.0, 0.0]]))
        assert np.isfinite(probs).all()
        assert probs[0, 0] == pytest.approx(1.0)

    def test_loss_is_mean_neg_log_prob(self):
        logits = np.array([[2.0, 0.0], [0.0, 2.0]])
        labels = np.array([0, 0])
        loss, probs, _ = softmax_cross_entropy(logits, labels)
        expected = -(np.log(probs[0, 0]) + np.log(probs[1, 0])) / 2
        assert loss == pytest.approx(expected)

    def test_grad_is_probs_minus_onehot_over_n(self):
        logits = rng64(30).normal(size=(3, 4))
        labels = np.array([1, 3, 0])
        _, probs, grad = softmax_cross_entropy(logits, labels)
        onehot = np.zeros_like(probs)
        onehot[np.arange(3), labels] = 1.0
        assert np.allclose(grad, (probs - onehot) / 3)

    def test_confident_correct_gives_zero_loss_and_grad(self):
        logits = np.array([[100.0, 0.0]])
        loss, _, grad = softmax_cross_entropy(logits, np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.abs(grad).max() < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((2, 2)), np.array([0, 2]))

    def test_grad_matches_finite_differences(self):
        logits = rng64(31).normal(size=(3, 3))
        labels = np.array([0, 2, 1])
        _, _, grad = softmax_cross_entropy(logits, labels)
        eps = 1e-6
        num = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            p = logits.copy()
            p[idx] += eps
            lp = softmax_cross_entropy(p, labels)[0]
            p[idx] -= 2 * eps
            lm = softmax_cross_entropy(p, labels)[0]
            num[idx] = (lp - lm) / (2 * eps)
        assert np.abs(grad - num).max() < 1e-8


class TestSGD:
    def test_zero_grad_no_change(self):
        p, v = sgd_step(1.5, 0.0, lr=0.1, momentum=0.9, velocity=0.0)
        assert (p, v) == (1.5, 0.0)

    def test_plain_step(self):
        p, _ = sgd_step(1.0, 1.0, lr=0.1, momentum=0.0, velocity=0.0)
        assert p == pytest.approx(0.9)

    def test_two_momentum_steps_hand_iterated(self):
        p, v = 1.0, 0.0
        p, v = sgd_step(p, 1.0, lr=0.1, momentum=0.9, velocity=v)
        assert (p, v) == (pytest.approx(0.9), pytest.approx(-0.1))
        p, v = sgd_step(p, 1.0, lr=0.1, momentum=0.9, velocity=v)
        assert v == pytest.approx(-0.19)
        assert p == pytest.approx(0.71)

    def test_optimizer_updates_in_place(self):
        fc = Dense(2, 2, rng64(32), dtype=np.float64)
        x = rng64(33).normal(size=(4, 2))
        fc.forward(x, training=True)
        fc.backward(np.ones((4, 2)))
        before = fc.w.copy()
        w_ref = fc.w
        SGD(lr=0.05, momentum=0.0).step(fc.params(), fc.grads())
        assert fc.w is w_ref  # same storage, updated contents
        assert np.allclose(fc.w, before - 0.05 * fc.dw)


class TestFiniteDiffAllLayers:
    @pytest.mark.parametrize("make,shape", [
        (lambda: Conv2D(2, 3, rng64(40), dtype=np.float64), (2, 2, 4, 3)),
        (lambda: BatchNorm(2, dtype=np.float64), (3, 2, 4, 4)),
        (lambda: BatchNorm(4, dtype=np.float64), (4, 4)),
        (lambda: Dense(4, 2, rng64(41), dtype=np.float64), (3, 4)),
        (lambda: MaxPool2x2(), (2, 3, 4, 4)),
        (lambda: Flatten(), (2, 3, 2, 2)),
    ], ids=["conv", "bn4d", "bn2d", "dense", "pool", "flatten"])
    def test_small_random_tensors(self, make, shape):
        layer = make()
        for seed in range(3):
            x = rng64(100 + seed).normal(size=shape)
            assert finite_diff_check(layer, x) < 1e-4
