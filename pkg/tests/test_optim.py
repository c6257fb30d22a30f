import math

import numpy as np
import pytest

from oracles import central_difference, rel_err
from scenechar.layers import softmax
from scenechar.network import Network, architecture_b
from scenechar.optim import SgdConfig, cross_entropy, sgd_step
from scenechar.tensor import ShapeError


def test_cross_entropy_one_hot_is_zero():
    loss, grad = cross_entropy(np.eye(5)[2], 2)
    assert loss == 0.0
    assert not grad.any()


def test_cross_entropy_uniform_27():
    loss, _ = cross_entropy(np.full(27, 1 / 27), 4)
    assert abs(loss - math.log(27)) < 1e-12
    assert round(loss, 6) == 3.295837


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        cross_entropy(np.full(3, 1 / 3), 3)
    with pytest.raises(ValueError):
        cross_entropy(np.full(3, 1 / 3), -1)


def test_cross_entropy_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    z = rng.normal(size=9)
    _, grad = cross_entropy(softmax(z), 4)
    numeric = central_difference(lambda: cross_entropy(softmax(z), 4)[0], z)
    assert rel_err(grad, numeric) < 1e-4


def test_batch_loss_and_grad_are_means():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(4, 6))
    labels = np.array([0, 5, 2, 2])
    loss, grad = cross_entropy(softmax(z), labels)
    per = [cross_entropy(softmax(z[i]), labels[i]) for i in range(4)]
    assert abs(loss - np.mean([p[0] for p in per])) < 1e-12
    np.testing.assert_allclose(grad, np.stack([p[1] for p in per]) / 4, rtol=1e-12)


def test_sgd_step_examples():
    assert sgd_step(np.array([1.0]), np.array([0.5]), 0.005)[0] == 0.9975
    w = np.random.default_rng(2).normal(size=(3, 3))
    assert np.array_equal(sgd_step(w, np.zeros_like(w), 0.5), w)
    g = np.full((3, 3), 0.25)
    np.testing.assert_allclose(sgd_step(sgd_step(w, g, 0.01), g, 0.01), w - 2 * 0.01 * g, rtol=1e-15)


def test_sgd_step_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step(np.ones(3), np.ones(4), 0.1)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=-1), dict(batch_size=0), dict(epochs=0)])
def test_sgd_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SgdConfig(**kwargs)


def _small_net(seed):
    return Network.init(architecture_b(3, 1, 2, 3, 8, num_classes=5, input_hw=(12, 12)), seed)


def test_single_sample_step_decreases_loss():
    rng = np.random.default_rng(3)
    for seed in range(5):
        net = _small_net(seed)
        x = rng.uniform(-0.5, 0.5, size=(1, 1, 12, 12))
        y = np.array([rng.integers(5)])
        logits, caches = net.forward(x, keep=True)
        before, g = cross_entropy(softmax(logits), y)
        for (_, p), grad in zip(net.parameters(), net.backward(caches, g)):
            p[...] = sgd_step(p, grad, 1e-4)
        after, _ = cross_entropy(softmax(net.forward(x)), y)
        assert after < before


def test_batch_gradient_is_mean_of_sample_gradients():
    rng = np.random.default_rng(4)
    net = _small_net(0)
    x = rng.uniform(-0.5, 0.5, size=(3, 1, 12, 12))
    y = np.array([0, 3, 1])
    logits, caches = net.forward(x, keep=True)
    batch = net.backward(caches, cross_entropy(softmax(logits), y)[1])
    singles = []
    for i in range(3):
        logits, caches = net.forward(x[i : i + 1], keep=True)
        singles.append(net.backward(caches, cross_entropy(softmax(logits), y[i : i + 1])[1]))
    for j, g in enumerate(batch):
        mean = np.mean([s[j] for s in singles], axis=0)
        assert rel_err(g, mean, floor=1e-300) < 1e-12 or np.max(np.abs(g - mean)) < 1e-15
