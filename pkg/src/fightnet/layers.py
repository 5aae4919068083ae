"""Stateful layers over the kernels in :mod:`fightnet.tensor`.

Each layer owns ``params`` and ``grads`` dicts with identical keys and shapes.
``forward`` caches what ``backward`` needs; ``backward`` accumulates into
``grads`` and returns the gradient w.r.t. the layer input. All layers take a
leading batch axis.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T


class StateError(RuntimeError):
    """Raised when a layer is used out of order (e.g. backward before forward)."""


def xavier_init(dims, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float32):
    """Xavier/Glorot uniform: i.i.d. U[-a, a] with ``a = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fans must be positive, got fan_in={fan_in}, fan_out={fan_out}")
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=tuple(dims)).astype(dtype)


class Layer:
    trainable = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.cache = None
        self.training = True

    def _add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def train(self, mode: bool = True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0

    def _pop_cache(self):
        if self.cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        cache, self.cache = self.cache, None
        return cache

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_y):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


class Conv2D(Layer):
    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None, dtype=np.float32):
        super().__init__()
        self.stride, self.pad = stride, pad
        dims = (cout, cin, k, k)
        if rng is None:
            w = np.zeros(dims, dtype=dtype)
        else:
            w = xavier_init(dims, cin * k * k, cout * k * k, rng, dtype)
        self._add_param("weight", w)
        self._add_param("bias", np.zeros(cout, dtype=dtype))

    def forward(self, x):
        self.cache = x
        return T.conv2d(x, self.params["weight"], self.params["bias"], self.stride, self.pad)

    def backward(self, grad_y):
        x = self._pop_cache()
        gx, gw, gb = T.conv2d_grad(x, self.params["weight"], grad_y, self.stride, self.pad)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class MaxPool2D(Layer):
    def __init__(self, k, stride):
        super().__init__()
        self.k, self.stride = k, stride

    def forward(self, x):
        y, argmax = T.maxpool2d(x, self.k, self.stride)
        self.cache = (argmax, x.shape)
        return y

    def backward(self, grad_y):
        argmax, dims = self._pop_cache()
        return T.maxpool2d_grad(argmax, grad_y, dims)


class ReLU(Layer):
    def forward(self, x):
        self.cache = x
        return T.relu(x)

    def backward(self, grad_y):
        return T.relu_grad(self._pop_cache(), grad_y)


class Flatten(Layer):
    def forward(self, x):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_y):
        return grad_y.reshape(self._pop_cache())


class FullyConnected(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        if rng is None:
            w = np.zeros((n_out, n_in), dtype=dtype)
        else:
            w = xavier_init((n_out, n_in), n_in, n_out, rng, dtype)
        self._add_param("weight", w)
        self._add_param("bias", np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        self.cache = x
        return T.matmul_affine(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_y):
        x = self._pop_cache()
        gx, gw, gb = T.matmul_affine_grad(x, self.params["weight"], grad_y)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class BatchNorm(Layer):
    """Per-channel batch normalization over ``[B, C, ...]`` inputs.

    Train mode normalizes with batch statistics (over the batch and any
    spatial axes) and updates the running estimates; eval mode uses the
    running estimates and touches no state.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self._add_param("gamma", np.ones(channels, dtype=dtype))
        self._add_param("beta", np.zeros(channels, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def _shape(self, x):
        return (1, x.shape[1]) + (1,) * (x.ndim - 2)

    def forward(self, x):
        if x.ndim < 2 or x.shape[1] != self.params["gamma"].shape[0]:
            raise T.ShapeError(f"batchnorm expects [B,{self.params['gamma'].shape[0]},...], got {list(x.shape)}")
        shp = self._shape(x)
        gamma = self.params["gamma"].reshape(shp)
        beta = self.params["beta"].reshape(shp)
        if not self.training:
            mean = self.buffers["running_mean"].reshape(shp)
            var = self.buffers["running_var"].reshape(shp)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            self.cache = ("eval", xhat, inv)
            return gamma * xhat + beta

        if x.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        axes = (0,) + tuple(range(2, x.ndim))
        m = x.size // x.shape[1]
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        mom = self.momentum
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        # running variance uses the unbiased estimate
        rm[...] = (1 - mom) * rm + mom * mean.ravel()
        rv[...] = (1 - mom) * rv + mom * var.ravel() * (m / max(m - 1, 1))
        self.cache = ("train", xhat, inv, axes, m)
        return gamma * xhat + beta

    def backward(self, grad_y):
        cache = self._pop_cache()
        xhat, inv = cache[1], cache[2]
        shp = self._shape(grad_y)
        gamma = self.params["gamma"].reshape(shp)
        axes = (0,) + tuple(range(2, grad_y.ndim))
        self.grads["gamma"] += (grad_y * xhat).sum(axis=axes)
        self.grads["beta"] += grad_y.sum(axis=axes)
        dxhat = grad_y * gamma
        if cache[0] == "eval":
            return dxhat * inv
        m = cache[4]
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
        return (inv / m) * (m * dxhat - s1 - xhat * s2)


def batchnorm_forward(x, layer: BatchNorm, mode: str = "train"):
    """Functional entry point: run ``layer`` on ``x`` in ``mode`` ('train' or 'eval')."""
    layer.train(mode == "train")
    return layer.forward(x)


class Sequential(Layer):
    """Chain of layers; parameters are exposed as ``"<name>.<param>"``."""

    def __init__(self, named_layers):
        super().__init__()
        self.layers = list(named_layers)
        self._index()

    def _index(self):
        self.params, self.grads, self.buffers = {}, {}, {}
        for name, layer in self.layers:
            for k in layer.params:
                self.params[f"{name}.{k}"] = layer.params[k]
                self.grads[f"{name}.{k}"] = layer.grads[k]
            for k in layer.buffers:
                self.buffers[f"{name}.{k}"] = layer.buffers[k]

    def train(self, mode: bool = True):
        self.training = mode
        for _, layer in self.layers:
            layer.train(mode)
        return self

    def forward(self, x):
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_y):
        for _, layer in reversed(self.layers):
            grad_y = layer.backward(grad_y)
        return grad_y
