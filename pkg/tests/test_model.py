import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedccfa.model import (BLOCKS, CLASSIFIER, ContractError, DegenerateSimilarityError, FeatureBatch,
                           ModelParams, OptimizerState, alignment_loss_grad, forward_classifier,
                           forward_extractor, init_params, sgd_step, task_loss_grad)


def loop_extractor(params, inputs):
    out = np.zeros((inputs.shape[0], params.hidden_dim))
    for b in range(inputs.shape[0]):
        for h in range(params.hidden_dim):
            acc = params.extractor_bias[h]
            for i in range(params.input_dim):
                acc += inputs[b, i] * params.extractor_weights[h, i]
            out[b, h] = acc if acc > 0 else 0.0
    return out


def loop_classifier(params, features):
    out = np.zeros((features.shape[0], params.n_classes))
    for b in range(features.shape[0]):
        for c in range(params.n_classes):
            acc = params.classifier_bias[c]
            for h in range(params.hidden_dim):
                acc += features[b, h] * params.classifier_weights[c, h]
            out[b, c] = acc
    return out


def random_params(rng, input_dim=4, hidden=3, classes=3):
    return ModelParams(rng.normal(size=(hidden, input_dim)), rng.normal(size=hidden),
                       rng.normal(size=(classes, hidden)), rng.normal(size=classes))


def finite_difference(loss_fn, params, name, step=1e-5):
    grad = np.zeros_like(getattr(params, name))
    for idx in np.ndindex(grad.shape):
        plus, minus = params.copy(), params.copy()
        getattr(plus, name)[idx] += step
        getattr(minus, name)[idx] -= step
        grad[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * step)
    return grad


# central differences with step 1e-5 carry roundoff near 1e-11, so relative error is measured against
# max(|analytic|, |numeric|, 1e-6); entries that are truly zero must then agree to 1e-10 absolute
FD_FLOOR = 1e-6


def relative_error(analytic, numeric, floor=FD_FLOOR):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def assert_close_relative(analytic, numeric, rel=1e-4):
    assert relative_error(analytic, numeric) <= rel


class TestForward:
    def test_zero_map(self):
        params = ModelParams(np.zeros((3, 4)), np.zeros(3), np.zeros((2, 3)), np.zeros(2))
        assert np.all(forward_extractor(params, np.random.default_rng(0).normal(size=(5, 4))) == 0)

    def test_relu_identity_on_nonnegative(self):
        params = ModelParams(np.eye(4), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
        x = np.abs(np.random.default_rng(1).normal(size=(6, 4)))
        np.testing.assert_array_equal(forward_extractor(params, x), x)

    def test_extractor_matches_scalar_loops(self):
        rng = np.random.default_rng(2)
        params = random_params(rng, input_dim=4, hidden=3)
        x = rng.normal(size=(2, 4))
        np.testing.assert_allclose(forward_extractor(params, x), loop_extractor(params, x), atol=1e-12, rtol=0)

    def test_zero_classifier_gives_uniform_softmax(self):
        params = ModelParams(np.ones((3, 2)), np.zeros(3), np.zeros((5, 3)), np.zeros(5))
        logits = forward_classifier(params, np.ones((2, 3)))
        assert np.all(logits == 0)

    def test_one_hot_feature(self):
        weights = np.zeros((3, 4))
        weights[1] = 1.0
        bias = np.array([0.5, -0.25, 2.0])
        params = ModelParams(np.zeros((4, 2)), np.zeros(4), weights, bias)
        feature = np.zeros((1, 4))
        feature[0, 2] = 1.0
        assert forward_classifier(params, feature)[0, 1] == 1.0 - 0.25

    def test_classifier_matches_scalar_loops(self):
        rng = np.random.default_rng(3)
        params = random_params(rng, hidden=5, classes=4)
        z = rng.normal(size=(3, 5))
        np.testing.assert_allclose(forward_classifier(params, z), loop_classifier(params, z), atol=1e-12, rtol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6), st.integers(2, 5), st.integers(1, 5))
    def test_forward_equals_loops_property(self, seed, d, h, c, b):
        rng = np.random.default_rng(seed)
        params = random_params(rng, d, h, c)
        x = rng.normal(size=(b, d))
        z = forward_extractor(params, x)
        np.testing.assert_allclose(z, loop_extractor(params, x), atol=1e-12, rtol=0)
        np.testing.assert_allclose(forward_classifier(params, z), loop_classifier(params, z), atol=1e-12, rtol=0)

    def test_dimension_mismatch(self):
        params = random_params(np.random.default_rng(0))
        with pytest.raises(ContractError):
            forward_extractor(params, np.zeros((2, 5)))
        with pytest.raises(ContractError):
            forward_classifier(params, np.zeros((2, 4)))


class TestTaskLoss:
    def test_zero_logits_give_ln_c(self):
        params = ModelParams(np.ones((3, 2)), np.zeros(3), np.zeros((10, 3)), np.zeros(10))
        loss, _ = task_loss_grad(params, FeatureBatch(np.ones((4, 2)), [0, 3, 9, 5]))
        assert abs(loss - math.log(10)) <= 1e-12

    def test_frozen_extractor_grads_are_zero(self):
        rng = np.random.default_rng(4)
        params = random_params(rng)
        _, grads = task_loss_grad(params, FeatureBatch(rng.normal(size=(5, 4)), [0, 1, 2, 0, 1]),
                                  train_extractor=False)
        assert np.all(grads.extractor_weights == 0) and np.all(grads.extractor_bias == 0)
        assert np.any(grads.classifier_weights != 0)

    def test_frozen_classifier_grads_are_zero(self):
        rng = np.random.default_rng(5)
        params = random_params(rng)
        _, grads = task_loss_grad(params, FeatureBatch(rng.normal(size=(5, 4)), [0, 1, 2, 0, 1]),
                                  train_classifier=False)
        assert np.all(grads.classifier_weights == 0) and np.all(grads.classifier_bias == 0)

    def test_both_frozen_rejected(self):
        params = random_params(np.random.default_rng(0))
        with pytest.raises(ContractError):
            task_loss_grad(params, FeatureBatch(np.zeros((1, 4)), [0]), False, False)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng, 4, 5, 3)
        batch = FeatureBatch(rng.normal(size=(6, 4)), rng.integers(0, 3, size=6))
        _, grads = task_loss_grad(params, batch)
        for name in BLOCKS:
            numeric = finite_difference(lambda p: task_loss_grad(p, batch)[0], params, name)
            assert_close_relative(getattr(grads, name), numeric)


class TestAlignmentLoss:
    def test_identical_anchors_give_ln_c(self):
        rng = np.random.default_rng(6)
        params = random_params(rng, 4, 3, 4)
        anchors = np.tile(rng.normal(size=3), (4, 1))
        loss, _ = alignment_loss_grad(params, FeatureBatch(rng.normal(size=(7, 4)), rng.integers(0, 4, 7)),
                                      anchors, temperature=0.5)
        assert abs(loss - math.log(4)) <= 1e-12

    def test_feature_on_its_anchor(self):
        params = ModelParams(np.eye(2), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        anchors = np.array([[2.0, 0.0], [0.0, 3.0]])
        loss, _ = alignment_loss_grad(params, FeatureBatch([[1.0, 0.0]], [0]), anchors, temperature=1.0)
        # -ln(e / (e + 1)) = ln(1 + e^-1)
        assert loss == pytest.approx(0.3132616875182228, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        params = random_params(rng, 4, 5, 3)
        batch = FeatureBatch(rng.normal(size=(6, 4)), rng.integers(0, 3, size=6))
        anchors = np.abs(rng.normal(size=(3, 5)))
        _, grads = alignment_loss_grad(params, batch, anchors, 0.5)
        for name in ("extractor_weights", "extractor_bias"):
            numeric = finite_difference(lambda p: alignment_loss_grad(p, batch, anchors, 0.5)[0], params, name)
            assert_close_relative(getattr(grads, name), numeric)
        for name in CLASSIFIER:
            assert np.all(getattr(grads, name) == 0)

    def test_zero_anchor_is_degenerate(self):
        params = random_params(np.random.default_rng(0))
        anchors = np.ones((3, 3))
        anchors[1] = 0.0
        with pytest.raises(DegenerateSimilarityError):
            alignment_loss_grad(params, FeatureBatch(np.ones((1, 4)), [0]), anchors)

    def test_dead_feature_is_not_an_error(self):
        params = ModelParams(-np.eye(2), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        loss, grads = alignment_loss_grad(params, FeatureBatch([[1.0, 1.0]], [0]), np.eye(2), 0.5)
        assert loss == pytest.approx(math.log(2))
        assert np.all(grads.extractor_weights == 0)


class TestSGD:
    def test_zero_gradient_is_noop(self):
        params = random_params(np.random.default_rng(0))
        before = params.copy()
        sgd_step(params, params.zeros_like(), OptimizerState.for_params(params, 0.1, 0.9, 0.0))
        for name in BLOCKS:
            np.testing.assert_array_equal(getattr(params, name), getattr(before, name))

    def test_single_step(self):
        rng = np.random.default_rng(1)
        params = random_params(rng)
        grads = random_params(rng)
        expected = params.extractor_weights - 0.05 * grads.extractor_weights
        sgd_step(params, grads, OptimizerState.for_params(params, 0.05, 0.9, 0.0))
        np.testing.assert_allclose(params.extractor_weights, expected, rtol=0, atol=1e-15)

    def test_two_steps_with_momentum(self):
        rng = np.random.default_rng(2)
        params = random_params(rng)
        start = params.copy()
        grads = random_params(rng)
        state = OptimizerState.for_params(params, 0.1, 0.9, 0.0)
        sgd_step(params, grads, state)
        sgd_step(params, grads, state)
        for name in BLOCKS:
            displacement = getattr(params, name) - getattr(start, name)
            np.testing.assert_allclose(displacement, -0.1 * (1 + 1.9) * getattr(grads, name), atol=1e-14)

    def test_mask_and_weight_decay(self):
        params = ModelParams(np.ones((2, 2)), np.ones(2), np.ones((2, 2)), np.ones(2))
        state = OptimizerState.for_params(params, 1.0, 0.0, 0.5)
        sgd_step(params, params.zeros_like(), state, CLASSIFIER)
        assert np.all(params.classifier_weights == 0.5)
        assert np.all(params.extractor_weights == 1.0)


def test_init_params_shapes_and_finite():
    params = init_params(6, 4, 3, np.random.default_rng(0))
    assert params.classifier_weights.shape == (3, 4)
    assert params.class_classifiers().shape == (3, 5)
    assert params.is_finite()
