import math

import numpy as np
import pytest

from her2pss.core.errors import DegenerateInputError, DomainError, ShapeError, TrainingDivergedError
from her2pss.models.classifier import ClassWeights, ConfidenceRule
from her2pss.models.pss import PssConfig
from her2pss.models.scores import Her2Score
from her2pss.services.micro_cnn import (
    AdamW,
    MicroCnn,
    backward_and_step,
    forward,
    inverse_frequency_weights,
    softmax,
    weighted_cross_entropy,
)
from her2pss.services.pss_service import build_pss


def test_cross_entropy_single_sample():
    loss = weighted_cross_entropy([[0.1, 0.2, 0.3, 0.4]], [2], ClassWeights.uniform())
    assert loss == pytest.approx(-math.log(0.3), abs=1e-6)


def test_cross_entropy_applies_class_weight():
    weights = ClassWeights(w=(1.0, 1.0, 2.0, 1.0))
    loss = weighted_cross_entropy([[0.1, 0.2, 0.3, 0.4], [0.25, 0.25, 0.25, 0.25]], [2, 0], weights)
    assert loss == pytest.approx((-2.0 * math.log(0.3) - math.log(0.25)) / 2, abs=1e-9)


@pytest.mark.parametrize("alpha", [0.5, 3.0])
def test_cross_entropy_scales_linearly_with_weights(alpha):
    rng = np.random.default_rng(9)
    probs = rng.dirichlet(np.ones(4), size=12)
    labels = rng.integers(0, 4, size=12)
    weights = ClassWeights(w=(0.7, 1.3, 2.0, 0.4))
    scaled = ClassWeights(w=tuple(alpha * w for w in weights.w))

    base = weighted_cross_entropy(probs, labels, weights)

    assert weighted_cross_entropy(probs, labels, scaled) == pytest.approx(alpha * base, rel=1e-12)


def test_cross_entropy_clamps_zero_probability():
    loss = weighted_cross_entropy([[1.0, 0.0, 0.0, 0.0]], [1], ClassWeights.uniform())
    assert loss == pytest.approx(-math.log(1e-12))


def test_cross_entropy_rejects_bad_input():
    with pytest.raises(DegenerateInputError):
        weighted_cross_entropy(np.zeros((0, 4)), [], ClassWeights.uniform())
    with pytest.raises(DomainError):
        weighted_cross_entropy([[0.5, 0.5, 0.5, 0.5]], [0], ClassWeights.uniform())
    with pytest.raises(DomainError):
        weighted_cross_entropy([[1.2, -0.2, 0.0, 0.0]], [0], ClassWeights.uniform())


def test_inverse_frequency_weights():
    assert inverse_frequency_weights([800, 400, 200, 200]).w == pytest.approx((0.5, 1.0, 2.0, 2.0))
    assert inverse_frequency_weights([5, 5, 5, 5]).w == pytest.approx((1.0,) * 4)
    with pytest.raises(DegenerateInputError):
        inverse_frequency_weights([10, 0, 3, 3])


def test_softmax_rows_sum_to_one():
    probs = softmax(np.array([[1000.0, 0.0, -5.0, 3.0], [0.0, 0.0, 0.0, 0.0]]))
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert probs[1] == pytest.approx([0.25] * 4)


def test_zero_head_predicts_uniform():
    model = MicroCnn.initialize(6, seed=0, zero_head=True)
    x = np.random.default_rng(0).integers(0, 256, size=(3, 6, 16, 16), dtype=np.uint8)
    assert np.allclose(model.probabilities(x), 0.25)


def test_initialize_is_seeded():
    a = MicroCnn.initialize(9, seed=4)
    b = MicroCnn.initialize(9, seed=4)
    c = MicroCnn.initialize(9, seed=5)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["conv1.weight"], c.params["conv1.weight"])


def test_channel_mismatch_is_shape_error():
    model = MicroCnn.initialize(6, seed=0)
    with pytest.raises(ShapeError):
        model.probabilities(np.zeros((1, 9, 8, 8), dtype=np.uint8))


def test_forward_on_pss_returns_prediction():
    cfg = PssConfig(patch_size=16, n_full=2, n_half=1)
    core = np.random.default_rng(1).integers(0, 256, size=(40, 40, 3), dtype=np.uint8)
    pss = build_pss(core, cfg, seed=3)
    model = MicroCnn.initialize(cfg.stacked_channels, seed=1)

    pred = forward(model, pss, pss_index=7, sample_id="s1", rule=ConfidenceRule.MARGIN)

    assert pred.pss_index == 7 and pred.sample_id == "s1"
    assert sum(pred.probs) == pytest.approx(1.0)
    assert pred.argmax_score == Her2Score(int(np.argmax(pred.probs)))
    top, second = sorted(pred.probs, reverse=True)[:2]
    assert pred.confidence == pytest.approx(top - second)


def test_analytic_gradients_match_finite_differences():
    rng = np.random.default_rng(123)
    model = MicroCnn.initialize(6, seed=2, dtype=np.float64)
    # Non-zero biases keep ReLU units away from exact kinks.
    for name in ("conv1.bias", "conv2.bias", "fc.bias"):
        model.params[name] += rng.normal(0.0, 0.1, size=model.params[name].shape)
    x = rng.normal(0.0, 1.0, size=(3, 6, 9, 9))
    labels = [0, 2, 3]
    weights = ClassWeights(w=(0.5, 1.0, 2.0, 1.5))

    _, grads = model.loss_and_grads(x, labels, weights)

    eps = 1e-6
    for name, param in model.params.items():
        for _ in range(3):
            index = tuple(int(rng.integers(0, s)) for s in param.shape)
            original = param[index]
            param[index] = original + eps
            plus, _ = model.loss_and_grads(x, labels, weights)
            param[index] = original - eps
            minus, _ = model.loss_and_grads(x, labels, weights)
            param[index] = original
            numeric = (plus - minus) / (2 * eps)
            analytic = grads[name][index]
            scale = max(abs(numeric), abs(analytic), 1e-7)
            assert abs(numeric - analytic) / scale <= 1e-3 or abs(numeric - analytic) < 1e-8, (name, index)


def test_zero_learning_rate_leaves_parameters_unchanged():
    model = MicroCnn.initialize(6, seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    x = np.random.default_rng(0).integers(0, 256, size=(2, 6, 16, 16), dtype=np.uint8)

    _, loss = backward_and_step(model, x, [0, 1], ClassWeights.uniform(), AdamW(lr=0.0, weight_decay=1e-4))

    assert math.isfinite(loss)
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_training_steps_reduce_loss_on_a_fixed_batch():
    model = MicroCnn.initialize(6, seed=0, dtype=np.float64)
    x = np.random.default_rng(3).integers(0, 256, size=(4, 6, 16, 16), dtype=np.uint8)
    labels = [0, 1, 2, 3]
    optimizer = AdamW(lr=1e-2)
    first = None
    for _ in range(30):
        _, loss = backward_and_step(model, x, labels, ClassWeights.uniform(), optimizer)
        first = loss if first is None else first
    final, _ = model.loss_and_grads(x, labels, ClassWeights.uniform())
    assert final < first


def test_non_finite_parameters_raise():
    model = MicroCnn.initialize(6, seed=0)
    model.params["fc.bias"][0] = np.nan
    x = np.zeros((1, 6, 8, 8), dtype=np.uint8)
    with pytest.raises(TrainingDivergedError):
        backward_and_step(model, x, [0], ClassWeights.uniform(), AdamW(lr=1e-3))
