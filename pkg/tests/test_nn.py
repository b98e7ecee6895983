import numpy as np
import pytest

from drstack import nn
from drstack.model import bce_grad, bce_loss


def conv_naive(x, w, b, stride, padding):
    """Direct quadruple-loop convolution oracle."""
    n, h, width, c = x.shape
    f = w.shape[0]
    k = w.shape[3]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (h + 2 * padding - f) // stride + 1
    wo = (width + 2 * padding - f) // stride + 1
    out = np.zeros((n, ho, wo, k))
    for ni in range(n):
        for y in range(ho):
            for xx in range(wo):
                patch = xp[ni, y * stride : y * stride + f, xx * stride : xx * stride + f]
                for kk in range(k):
                    out[ni, y, xx, kk] = np.sum(patch * w[:, :, :, kk]) + b[kk]
    return out


def pool_naive(x, window, stride):
    n, h, width, c = x.shape
    ho = (h - window) // stride + 1
    wo = (width - window) // stride + 1
    out = np.zeros((n, ho, wo, c))
    for ni in range(n):
        for y in range(ho):
            for xx in range(wo):
                patch = x[ni, y * stride : y * stride + window, xx * stride : xx * stride + window]
                out[ni, y, xx] = patch.max(axis=(0, 1))
    return out


def test_conv_forward_matches_naive():
    rng = np.random.default_rng(0)
    layer = nn.Conv2D(2, 3, filter_size=3, stride=2, padding=1, rng=rng)
    x = rng.random((2, 6, 7, 2))
    out = layer.forward(x)
    expected = conv_naive(x, layer.params["W"], layer.params["b"], 2, 1)
    assert out.shape == expected.shape
    assert np.allclose(out, expected, atol=1e-12)


def test_maxpool_forward_matches_naive():
    rng = np.random.default_rng(1)
    layer = nn.MaxPool2D(window=3, stride=2)
    x = rng.random((2, 9, 8, 4))
    out = layer.forward(x)
    assert np.allclose(out, pool_naive(x, 3, 2), atol=1e-12)


def test_global_avg_pool():
    rng = np.random.default_rng(2)
    x = rng.random((3, 5, 7, 4))
    layer = nn.GlobalAvgPool()
    assert np.allclose(layer.forward(x), x.mean(axis=(1, 2)), atol=1e-12)


def test_dropout_eval_is_identity():
    rng = np.random.default_rng(3)
    x = rng.random((4, 10))
    layer = nn.Dropout(0.5)
    assert (layer.forward(x, training=False) == x).all()


def test_dropout_training_scales_survivors():
    rng = np.random.default_rng(4)
    x = np.ones((1000, 8))
    layer = nn.Dropout(0.25)
    out = layer.forward(x, training=True, rng=np.random.default_rng(0))
    kept = out[out > 0]
    assert np.allclose(kept, 1.0 / 0.75)
    assert abs((out > 0).mean() - 0.75) < 0.02


def build_small_net(rng):
    return nn.Network(
        [
            nn.Conv2D(3, 4, 3, stride=1, padding=1, rng=rng),
            nn.ReLU(),
            nn.MaxPool2D(2, 2),
            nn.Conv2D(4, 5, 3, stride=2, padding=0, rng=rng),
            nn.ReLU(),
            nn.GlobalAvgPool(),
            nn.Dense(5, 6, l2=1e-3, rng=rng),
            nn.ReLU(),
            nn.Dense(6, 4, rng=rng),
            nn.Sigmoid(),
        ]
    )


def test_network_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    net = build_small_net(rng)
    x = rng.random((3, 10, 10, 3))
    t = (rng.random((3, 4)) > 0.5).astype(float)

    def total_loss():
        return bce_loss(net.forward(x), t) + net.l2_penalty()

    net.backward(bce_grad(net.forward(x), t))
    analytic = {f"{i}.{n}": layer.grads[n].copy() for i, layer, n in net.param_items()}

    eps = 1e-6
    worst = 0.0
    for i, layer, name in net.param_items():
        flat = layer.params[name].ravel()
        for j in rng.choice(flat.size, size=min(5, flat.size), replace=False):
            old = flat[j]
            flat[j] = old + eps
            up = total_loss()
            flat[j] = old - eps
            down = total_loss()
            flat[j] = old
            fd = (up - down) / (2 * eps)
            an = analytic[f"{i}.{name}"].ravel()[j]
            worst = max(worst, abs(fd - an) / max(1e-8, abs(fd), abs(an)))
    assert worst < 1e-4


def test_frozen_layers_skipped_by_optimizer():
    rng = np.random.default_rng(6)
    net = build_small_net(rng)
    net.layers[0].frozen = True
    before = net.layers[0].params["W"].copy()
    head_before = net.layers[6].params["W"].copy()
    x = rng.random((4, 10, 10, 3))
    t = (rng.random((4, 4)) > 0.5).astype(float)
    opt = nn.Adam(net, learning_rate=1e-2)
    net.backward(bce_grad(net.forward(x, training=False), t))
    opt.step()
    assert np.array_equal(net.layers[0].params["W"], before)
    assert not np.array_equal(net.layers[6].params["W"], head_before)


def test_fully_frozen_network_backward_is_noop():
    rng = np.random.default_rng(7)
    net = build_small_net(rng)
    for layer in net.layers:
        layer.frozen = True
    x = rng.random((2, 10, 10, 3))
    t = np.ones((2, 4))
    net.backward(bce_grad(net.forward(x), t))  # must not raise
    assert nn.Adam(net, 1e-2)._slots == []


def test_state_round_trip():
    rng = np.random.default_rng(8)
    net = build_small_net(rng)
    x = rng.random((2, 10, 10, 3))
    saved = net.state()
    ref = net.forward(x)
    # perturb, then restore
    for layer in net.layers:
        for name in layer.params:
            layer.params[name] += 0.1
    assert not np.allclose(net.forward(x), ref)
    net.set_state(saved)
    assert np.array_equal(net.forward(x), ref)


def test_l2_penalty_counts_only_registered_params():
    rng = np.random.default_rng(9)
    dense = nn.Dense(3, 2, l2=0.01, rng=rng)
    free = nn.Dense(2, 2, l2=0.0, rng=rng)
    net = nn.Network([dense, free])
    expected = 0.01 * float(np.sum(dense.params["W"] ** 2))
    assert net.l2_penalty() == pytest.approx(expected, rel=1e-12)


def test_adam_moves_toward_minimum():
    # one-parameter quadratic: loss = (w - 3)^2, gradient 2(w - 3)
    layer = nn.Dense(1, 1, rng=np.random.default_rng(10))
    layer.params["W"][...] = 0.0
    net = nn.Network([layer])
    opt = nn.Adam(net, learning_rate=0.1)
    for _ in range(300):
        w = layer.params["W"][0, 0]
        layer.grads = {"W": np.array([[2 * (w - 3.0)]]), "b": np.zeros(1)}
        opt.step()
    assert abs(layer.params["W"][0, 0] - 3.0) < 1e-2
