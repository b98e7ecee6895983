"""Minimal NumPy neural-network engine: sequential layers, manual backprop,
Adam.

Just enough machinery for the models this package trains: 2-D convolution,
max pooling, global average pooling, dense layers with an optional quadratic
weight penalty, dropout, ReLU and sigmoid.  Arrays are NHWC float64; all
randomness (init, dropout) flows through explicit numpy Generators so runs
are bit-reproducible.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    """Base layer: forward caches whatever backward needs.

    Parameterized layers keep arrays in .params and matching gradients in
    .grads after backward; .l2 maps param names to quadratic penalty
    coefficients.  .frozen excludes a layer from optimization.
    """

    frozen = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.l2: dict[str, float] = {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Dense(Layer):
    """Fully connected layer.  init 'he' suits a ReLU after it, 'glorot'
    suits a sigmoid output layer."""

    def __init__(self, n_in: int, n_out: int, l2: float = 0.0, rng=None, init: str = "he"):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if init == "he":
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        elif init == "glorot":
            limit = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-limit, limit, size=(n_in, n_out))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.params = {"W": w, "b": np.zeros(n_out)}
        if l2 > 0:
            self.l2 = {"W": l2}
        self._x = None

    def forward(self, x, training=False, rng=None):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        gw = self._x.T @ grad
        coef = self.l2.get("W", 0.0)
        if coef:
            gw = gw + 2.0 * coef * self.params["W"]
        self.grads = {"W": gw, "b": grad.sum(axis=0)}
        return grad @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class Sigmoid(Layer):
    def forward(self, x, training=False, rng=None):
        self._out = 1.0 / (1.0 + np.exp(-x))
        return self._out

    def backward(self, grad):
        return grad * self._out * (1.0 - self._out)


class Dropout(Layer):
    """Inverted dropout: active only in training mode, identity at inference."""

    def __init__(self, rate: float):
        super().__init__()
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Flatten(Layer):
    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class GlobalAvgPool(Layer):
    """(N, H, W, C) -> (N, C) spatial mean."""

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad):
        n, h, w, c = self._shape
        return np.broadcast_to(grad[:, None, None, :] / (h * w), self._shape).copy()


class Conv2D(Layer):
    """Zero-padded strided convolution over NHWC input, im2col implementation."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        filter_size: int,
        stride: int = 1,
        padding: int = 0,
        rng=None,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        f = filter_size
        scale = np.sqrt(2.0 / (f * f * in_channels))
        self.params = {
            "W": rng.normal(0.0, scale, size=(f, f, in_channels, out_channels)),
            "b": np.zeros(out_channels),
        }
        self.filter_size = f
        self.stride = stride
        self.padding = padding

    def forward(self, x, training=False, rng=None):
        f, s, p = self.filter_size, self.stride, self.padding
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        windows = sliding_window_view(x, (f, f), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo = windows.shape[:3]
        # window dims come out as (C, f, f); flatten in that order
        cols = windows.reshape(n * ho * wo, -1)
        w_mat = self.params["W"].transpose(2, 0, 1, 3).reshape(cols.shape[1], -1)
        out = cols @ w_mat + self.params["b"]
        self._cache = (cols, x.shape, (n, ho, wo))
        return out.reshape(n, ho, wo, -1)

    def backward(self, grad):
        cols, padded_shape, (n, ho, wo) = self._cache
        f, s, p = self.filter_size, self.stride, self.padding
        c_in = self.params["W"].shape[2]
        k = self.params["W"].shape[3]

        g_mat = grad.reshape(n * ho * wo, k)
        gw = (cols.T @ g_mat).reshape(c_in, f, f, k).transpose(1, 2, 0, 3)
        self.grads = {"W": gw, "b": g_mat.sum(axis=0)}

        g_cols = (g_mat @ self.params["W"].transpose(2, 0, 1, 3).reshape(-1, k).T)
        g_windows = g_cols.reshape(n, ho, wo, c_in, f, f)
        gx = np.zeros(padded_shape)
        for fi in range(f):
            for fj in range(f):
                gx[:, fi : fi + ho * s : s, fj : fj + wo * s : s, :] += g_windows[
                    :, :, :, :, fi, fj
                ]
        if p:
            gx = gx[:, p:-p, p:-p, :]
        return gx


class MaxPool2D(Layer):
    """Unpadded max pooling; ties route the gradient to the first maximum."""

    def __init__(self, window: int, stride: int):
        super().__init__()
        self.window = window
        self.stride = stride

    def forward(self, x, training=False, rng=None):
        f, s = self.window, self.stride
        windows = sliding_window_view(x, (f, f), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo, c = windows.shape[:4]
        flat = windows.reshape(n, ho, wo, c, f * f)
        self._argmax = flat.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(flat, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        f, s = self.window, self.stride
        n, ho, wo, c = grad.shape
        ni, hi, wi, ci = np.indices((n, ho, wo, c), sparse=False)
        rows = hi * s + self._argmax // f
        cols = wi * s + self._argmax % f
        gx = np.zeros(self._in_shape)
        np.add.at(gx, (ni, rows, cols, ci), grad)
        return gx


class Network:
    """A plain sequential stack with explicit training/inference modes."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, training: bool = False, rng=None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, grad) -> None:
        """Backpropagate down to the earliest trainable layer; anything below
        a fully frozen prefix is skipped."""
        stop = None
        for i, layer in enumerate(self.layers):
            if layer.params and not layer.frozen:
                stop = i
                break
        if stop is None:
            return
        for layer in reversed(self.layers[stop:]):
            grad = layer.backward(grad)

    def param_items(self, trainable_only: bool = False):
        for i, layer in enumerate(self.layers):
            if not layer.params:
                continue
            if trainable_only and layer.frozen:
                continue
            for name in sorted(layer.params):
                yield i, layer, name

    def state(self) -> dict[str, np.ndarray]:
        return {
            f"layer{i:03d}.{name}": layer.params[name].copy()
            for i, layer, name in self.param_items()
        }

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for i, layer, name in self.param_items():
            key = f"layer{i:03d}.{name}"
            saved = state[key]
            if saved.shape != layer.params[name].shape:
                raise ValueError(
                    f"{key}: saved shape {saved.shape} != model {layer.params[name].shape}"
                )
            layer.params[name][...] = saved

    def l2_penalty(self) -> float:
        total = 0.0
        for layer in self.layers:
            if layer.frozen:
                continue
            for name, coef in layer.l2.items():
                total += coef * float(np.sum(layer.params[name] ** 2))
        return total

    def count_params(self) -> int:
        return sum(layer.params[name].size for _, layer, name in self.param_items())


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, network: Network, learning_rate: float):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self._slots = [
            (layer, name) for _, layer, name in network.param_items(trainable_only=True)
        ]
        self._m = [np.zeros_like(layer.params[name]) for layer, name in self._slots]
        self._v = [np.zeros_like(layer.params[name]) for layer, name in self._slots]

    def step(self) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for (layer, name), m, v in zip(self._slots, self._m, self._v):
            g = layer.grads[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            layer.params[name] -= self.lr * (m / correct1) / (
                np.sqrt(v / correct2) + self.eps
            )
