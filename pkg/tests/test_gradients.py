"""Central finite-difference checks for every layer's backward pass, in float64."""

import numpy as np
import pytest

from fairset.nn.layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    MaxPool2d,
    ReLU,
)
from fairset.nn.loss import softmax_cross_entropy

SEEDS = range(20)


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f() with respect to x, mutated in place."""
    g = np.zeros_like(x)
    xf, gf = x.ravel(), g.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = f()
        xf[i] = orig - h
        fm = f()
        xf[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic, numeric, tol=1e-3, floor=1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    assert rel.max() < tol, f"max rel err {rel.max():.2e}"


def weighted(layer, x, upstream, train=True, **fwd):
    return lambda: float((layer.forward(x, train, **fwd) * upstream).sum())


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = Conv2d(2, 3, rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 6, 6))
    up = rng.standard_normal((2, 3, 6, 6))

    layer.forward(x, True)
    dx = layer.backward(up)
    assert_grads_close(dx, numeric_grad(weighted(layer, x, up), x))
    for name in ("w", "b"):
        assert_grads_close(
            layer.grads[name], numeric_grad(weighted(layer, x, up), layer.params[name])
        )


@pytest.mark.parametrize("seed", SEEDS)
def test_batchnorm_train_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = BatchNorm2d(2, dtype=np.float64)
    layer.params["gamma"] = rng.uniform(0.5, 1.5, 2)
    layer.params["beta"] = rng.standard_normal(2)
    x = rng.standard_normal((3, 2, 4, 4)) * 2.0
    up = rng.standard_normal((3, 2, 4, 4))

    layer.forward(x, True)
    dx = layer.backward(up)
    assert_grads_close(dx, numeric_grad(weighted(layer, x, up), x))
    for name in ("gamma", "beta"):
        assert_grads_close(
            layer.grads[name], numeric_grad(weighted(layer, x, up), layer.params[name])
        )


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = MaxPool2d()
    # spread values so no two window entries sit within the FD step of a tie
    x = rng.standard_normal((2, 2, 4, 4)) * 50.0
    up = rng.standard_normal((2, 2, 2, 2))
    layer.forward(x, True)
    dx = layer.backward(up)
    assert_grads_close(dx, numeric_grad(weighted(layer, x, up), x))


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = Dense(7, 5, rng, dtype=np.float64)
    x = rng.standard_normal((4, 7))
    up = rng.standard_normal((4, 5))
    layer.forward(x, True)
    dx = layer.backward(up)
    assert_grads_close(dx, numeric_grad(weighted(layer, x, up), x))
    for name in ("w", "b"):
        assert_grads_close(
            layer.grads[name], numeric_grad(weighted(layer, x, up), layer.params[name])
        )


@pytest.mark.parametrize("seed", SEEDS)
def test_dropout_masked_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = Dropout(0.4, rng)
    x = rng.standard_normal((2, 3, 4, 4))
    up = rng.standard_normal((2, 3, 4, 4))
    layer.forward(x, True)  # fixes the mask; FD reuses it
    dx = layer.backward(up)
    assert_grads_close(dx, numeric_grad(weighted(layer, x, up, freeze_mask=True), x))


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = ReLU()
    x = rng.standard_normal((3, 2, 4, 4))
    x += 0.2 * np.sign(x)  # keep inputs away from the kink
    up = rng.standard_normal(x.shape)
    layer.forward(x, True)
    dx = layer.backward(up)
    assert_grads_close(dx, numeric_grad(weighted(layer, x, up), x))


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy_gradients(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((5, 10))
    labels = rng.integers(0, 10, 5)
    _, grad = softmax_cross_entropy(logits, labels)

    num = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits, h=1e-6)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(num)), 1e-4)
    assert (np.abs(grad - num) / denom).max() < 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_layer_chain_gradients(seed):
    """Conv -> BN -> ReLU -> pool -> flatten -> dense -> softmax, end to end."""
    rng = np.random.default_rng(seed + 100)
    conv = Conv2d(1, 2, rng, dtype=np.float64)
    bn = BatchNorm2d(2, dtype=np.float64)
    relu = ReLU()
    pool = MaxPool2d()
    flat = Flatten()
    dense = Dense(2 * 3 * 3, 10, rng, dtype=np.float64)
    layers = [conv, bn, relu, pool, flat, dense]

    x = rng.standard_normal((3, 1, 6, 6))
    labels = rng.integers(0, 10, 3)

    def run():
        h = x
        for l in layers:
            h = l.forward(h, True)
        return softmax_cross_entropy(h, labels)[0]

    h = x
    for l in layers:
        h = l.forward(h, True)
    _, d = softmax_cross_entropy(h, labels)
    for l in reversed(layers):
        d = l.backward(d)

    assert_grads_close(conv.grads["w"], numeric_grad(run, conv.params["w"]))
    assert_grads_close(bn.grads["gamma"], numeric_grad(run, bn.params["gamma"]))
    assert_grads_close(dense.grads["b"], numeric_grad(run, dense.params["b"]))


def test_zero_upstream_gradient_gives_zero_param_grads():
    rng = np.random.default_rng(0)
    conv = Conv2d(2, 3, rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 6, 6))
    conv.forward(x, True)
    conv.backward(np.zeros((2, 3, 6, 6)))
    assert not conv.grads["w"].any()
    assert not conv.grads["b"].any()


def test_frozen_dropout_mask_backward_is_deterministic():
    rng = np.random.default_rng(0)
    layer = Dropout(0.5, rng)
    x = rng.standard_normal((4, 8))
    up = rng.standard_normal((4, 8))
    layer.forward(x, True)
    g1 = layer.backward(up)
    g2 = layer.backward(up)
    assert np.array_equal(g1, g2)
