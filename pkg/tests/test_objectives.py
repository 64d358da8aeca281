import numpy as np
import pytest

from pmce.gradcheck import finite_diff_grad, relative_error
from pmce.objectives import (
    ClassifierParams,
    LossWeights,
    cross_entropy,
    rec_loss,
    supcon_loss,
    total_loss,
)


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 5, 9):
            loss, _ = cross_entropy(np.zeros((3, c)), np.array([0, 1, c - 1]))
            assert loss == pytest.approx(np.log(c))

    def test_known_binary_value(self):
        loss, _ = cross_entropy(np.array([[2.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.126928, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((1, 3)), np.array([3]))

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(4, 5))
        labels = rng.integers(0, 5, size=4)
        _, grad = cross_entropy(logits, labels)
        num = finite_diff_grad(
            lambda v: cross_entropy(v.reshape(4, 5), labels)[0], logits.ravel()
        )
        assert relative_error(grad.ravel(), num) < 1e-6

    def test_nonnegative_and_vanishes_when_confident(self):
        loss, _ = cross_entropy(np.array([[60.0, 0.0, 0.0]]), np.array([0]))
        assert 0.0 <= loss < 1e-12


class TestRecLoss:
    def test_fixed_point_is_zero(self):
        v = np.arange(6.0).reshape(2, 3)
        loss, grad = rec_loss(v, v.copy())
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_known_value(self):
        loss, _ = rec_loss(np.array([[1.0, -2.0]]), np.zeros((1, 2)))
        assert loss == pytest.approx(3.0)

    def test_one_homogeneous(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=(3, 4))
        mu = rng.normal(size=(3, 4))
        base, _ = rec_loss(v, mu)
        scaled, _ = rec_loss(mu + 2.5 * (v - mu), mu)
        assert scaled == pytest.approx(2.5 * base)

    def test_grads_match_finite_differences_away_from_kinks(self):
        rng = np.random.default_rng(2)
        while True:
            v = rng.normal(size=(3, 4))
            mu = rng.normal(size=(3, 4))
            if np.abs(v - mu).min() > 1e-3:
                break
        _, grad = rec_loss(v, mu)
        num = finite_diff_grad(
            lambda x: rec_loss(x.reshape(3, 4), mu)[0], v.ravel()
        )
        assert relative_error(grad.ravel(), num) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rec_loss(np.zeros((2, 3)), np.zeros((2, 4)))


class TestSupconLoss:
    def test_two_identical_same_class_is_zero(self):
        x = np.array([[1.0, 2.0], [1.0, 2.0]])
        loss, _ = supcon_loss(x, np.array([0, 0]), tau_c=0.1)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_four_identical_same_class_is_log3(self):
        x = np.tile(np.array([0.5, -1.0, 2.0]), (4, 1))
        loss, _ = supcon_loss(x, np.zeros(4, dtype=int), tau_c=0.1)
        assert loss == pytest.approx(np.log(3.0), abs=1e-9)

    def test_all_singletons_is_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 3))
        loss, grad = supcon_loss(x, np.arange(4), tau_c=0.1)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_row_scale_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 3))
        labels = np.array([0, 0, 1, 1, 1])
        a, _ = supcon_loss(x, labels, tau_c=0.2)
        scales = rng.uniform(0.1, 10.0, size=(5, 1))
        b, _ = supcon_loss(x * scales, labels, tau_c=0.2)
        assert b == pytest.approx(a, rel=1e-12)

    def test_zero_row_rejected(self):
        x = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="zero norm"):
            supcon_loss(x, np.array([0, 0]), tau_c=0.1)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            supcon_loss(np.ones((1, 2)), np.array([0]), tau_c=0.1)

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 4))
        labels = np.array([0, 0, 1, 1, 2, 2])
        _, grad = supcon_loss(x, labels, tau_c=0.1)
        num = finite_diff_grad(
            lambda v: supcon_loss(v.reshape(6, 4), labels, tau_c=0.1)[0], x.ravel()
        )
        assert relative_error(grad.ravel(), num) < 1e-6

    def test_grads_with_singleton_anchors_present(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(5, 3))
        labels = np.array([0, 0, 1, 2, 3])  # anchors 2..4 have no positives
        _, grad = supcon_loss(x, labels, tau_c=0.15)
        num = finite_diff_grad(
            lambda v: supcon_loss(v.reshape(5, 3), labels, tau_c=0.15)[0], x.ravel()
        )
        assert relative_error(grad.ravel(), num) < 1e-6


class TestTotalLoss:
    def test_zero_weights_reduce_to_cls(self):
        w = LossWeights(lambda_rec=0.0, lambda_con=0.0)
        assert total_loss((1.7, 9.0, 4.0), w) == pytest.approx(1.7)

    def test_unit_weights_sum(self):
        w = LossWeights(lambda_rec=1.0, lambda_con=1.0)
        assert total_loss((1.0, 2.0, 3.0), w) == pytest.approx(6.0)

    def test_linear_in_each_component(self):
        w = LossWeights(lambda_rec=0.5, lambda_con=2.0)
        base = total_loss((1.0, 1.0, 1.0), w)
        assert total_loss((2.0, 1.0, 1.0), w) - base == pytest.approx(1.0)
        assert total_loss((1.0, 3.0, 1.0), w) - base == pytest.approx(1.0)
        assert total_loss((1.0, 1.0, 2.0), w) - base == pytest.approx(2.0)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_rec=-0.1)
    with pytest.raises(ValueError):
        LossWeights(tau_c=0.0)


def test_classifier_params_must_be_finite():
    with pytest.raises(ValueError):
        ClassifierParams(W_c=np.array([[np.nan]]), b_c=np.zeros(1))
