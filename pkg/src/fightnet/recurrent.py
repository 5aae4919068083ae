"""Convolutional LSTM and fully-connected LSTM cells with BPTT.

Both cells share the same gate algebra::

    i = sigmoid(Wx_i * x + Wh_i * h + b_i)
    f = sigmoid(Wx_f * x + Wh_f * h + b_f)
    g = tanh   (Wx_c * x + Wh_c * h + b_c)
    c' = g . i + c . f
    o = sigmoid(Wx_o * x + Wh_o * h + b_o)
    h' = o . tanh(c')

where ``*`` is a same-padded stride-1 convolution for :class:`ConvLSTM` and a
matrix product for :class:`LSTM`. There are no peephole terms. Parameters are
named ``w_x_<gate>``, ``w_h_<gate>``, ``b_<gate>`` for gate in ``i, f, c, o``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Layer, StateError, xavier_init

GATES = ("i", "f", "c", "o")


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray


# per-cell names for the shared state type
ConvLSTMState = CellState
LSTMState = CellState


def _conv_same(x, w):
    k = w.shape[-1]
    return T.conv2d(x, w, None, 1, (k - 1) // 2)


def _conv_same_grad(x, w, gz):
    k = w.shape[-1]
    gx, gw, _ = T.conv2d_grad(x, w, gz, 1, (k - 1) // 2)
    return gx, gw


def _dense(x, w):
    return x @ w.T


def _dense_grad(x, w, gz):
    return gz @ w, gz.T @ x if x.ndim == 2 else np.outer(gz, x)


def _conv_bias(b):
    return b[:, None, None]


def _dense_bias(b):
    return b


def _gate_step(x, state, params, transform, bias_view):
    h_prev, c_prev = state.h, state.c
    acts = {}
    for g in GATES:
        z = transform(x, params[f"w_x_{g}"]) + transform(h_prev, params[f"w_h_{g}"])
        z = z + bias_view(params[f"b_{g}"])
        acts[g] = T.tanh(z) if g == "c" else T.sigmoid(z)
    c = acts["c"] * acts["i"] + c_prev * acts["f"]
    tc = T.tanh(c)
    h = acts["o"] * tc
    return CellState(h, c), (x, h_prev, c_prev, acts, tc)


def _gate_step_backward(cache, dh, dc, params, grads, transform_grad, spatial_axes):
    x, h_prev, c_prev, acts, tc = cache
    i, f, g, o = acts["i"], acts["f"], acts["c"], acts["o"]
    do = dh * tc
    dc = dc + dh * o * (1 - tc * tc)
    dz = {
        "i": dc * g * i * (1 - i),
        "f": dc * c_prev * f * (1 - f),
        "c": dc * i * (1 - g * g),
        "o": do * o * (1 - o),
    }
    dc_prev = dc * f
    dx = None
    dh_prev = None
    for gate in GATES:
        gz = dz[gate]
        gx, gwx = transform_grad(x, params[f"w_x_{gate}"], gz)
        gh, gwh = transform_grad(h_prev, params[f"w_h_{gate}"], gz)
        grads[f"w_x_{gate}"] += gwx
        grads[f"w_h_{gate}"] += gwh
        grads[f"b_{gate}"] += gz.sum(axis=spatial_axes)
        dx = gx if dx is None else dx + gx
        dh_prev = gh if dh_prev is None else dh_prev + gh
    return dx, dh_prev, dc_prev


def _check_conv_dims(x, state, params):
    ch, cin = params["w_x_i"].shape[:2]
    if x.shape[-3] != cin or state.h.shape[-3] != ch:
        raise T.ShapeError(
            f"ConvLSTM expects input channels {cin} and hidden channels {ch}, "
            f"got input {list(x.shape)} and hidden {list(state.h.shape)}"
        )
    if x.shape[-2:] != state.h.shape[-2:] or state.h.shape != state.c.shape:
        raise T.ShapeError(
            f"spatial dims of input {list(x.shape)} and state {list(state.h.shape)} must agree"
        )


def convlstm_step(I_t, state: CellState, params: dict) -> CellState:
    """One ConvLSTM step on ``[Cin,H,W]`` (or batched ``[B,Cin,H,W]``) input."""
    _check_conv_dims(I_t, state, params)
    new, _ = _gate_step(I_t, state, params, _conv_same, _conv_bias)
    return new


def convlstm_sequence(inputs, params: dict, init: CellState | None = None):
    """Fold :func:`convlstm_step` over ``inputs``; return ``(h_final, cache)``.

    ``cache`` is the list of per-step caches consumed by
    :func:`convlstm_sequence_backward`.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("convlstm_sequence needs at least one input frame")
    if init is None:
        ch = params["w_x_i"].shape[0]
        shape = inputs[0].shape[:-3] + (ch,) + inputs[0].shape[-2:]
        zero = np.zeros(shape, dtype=params["w_x_i"].dtype)
        init = CellState(zero, zero.copy())
    state = init
    cache = []
    for x in inputs:
        if x.shape != inputs[0].shape:
            raise T.ShapeError("all sequence inputs must share dims")
        _check_conv_dims(x, state, params)
        state, step_cache = _gate_step(x, state, params, _conv_same, _conv_bias)
        cache.append(step_cache)
    return state.h, cache


def convlstm_sequence_backward(cache, grad_h, params: dict, grads: dict):
    """BPTT through a cached sequence. Returns per-step input gradients."""
    batched = grad_h.ndim == 4
    axes = (0, 2, 3) if batched else (1, 2)
    dh, dc = grad_h, np.zeros_like(grad_h)
    dxs = [None] * len(cache)
    for t in range(len(cache) - 1, -1, -1):
        dxs[t], dh, dc = _gate_step_backward(cache[t], dh, dc, params, grads, _conv_same_grad, axes)
    return dxs


def lstm_step(x_t, state: CellState, params: dict) -> CellState:
    """Fully-connected LSTM step on a vector ``[n]`` or batch ``[B, n]``."""
    units, in_dim = params["w_x_i"].shape
    if x_t.shape[-1] != in_dim or state.h.shape[-1] != units or state.c.shape != state.h.shape:
        raise T.ShapeError(
            f"LSTM expects input {in_dim} and {units} units, got x {list(x_t.shape)}, "
            f"h {list(state.h.shape)}"
        )
    new, _ = _gate_step(x_t, state, params, _dense, _dense_bias)
    return new


class _RecurrentCell(Layer):
    """Layer wrapper that consumes ``[B, T, ...]`` and emits the final hidden state."""

    _transform = None
    _transform_grad = None
    _bias_view = None

    def _init_gates(self, in_shape, hid_shape, fans_x, fans_h, n_hidden, rng, dtype):
        for g in GATES:
            for tag, shape, fans in (("x", in_shape, fans_x), ("h", hid_shape, fans_h)):
                if rng is None:
                    w = np.zeros(shape, dtype=dtype)
                else:
                    w = xavier_init(shape, fans[0], fans[1], rng, dtype)
                self._add_param(f"w_{tag}_{g}", w)
            self._add_param(f"b_{g}", np.zeros(n_hidden, dtype=dtype))

    def initial_state(self, x0):
        raise NotImplementedError

    def _spatial_axes(self, ndim):
        raise NotImplementedError

    def _check(self, x, state):
        pass

    def forward(self, xs):
        if xs.shape[1] < 1:
            raise ValueError("sequence must contain at least one step")
        state = self.initial_state(xs[:, 0])
        caches = []
        for t in range(xs.shape[1]):
            self._check(xs[:, t], state)
            state, cache = _gate_step(xs[:, t], state, self.params, type(self)._transform, type(self)._bias_view)
            caches.append(cache)
        self.cache = (caches, xs.shape)
        return state.h

    def backward(self, grad_h):
        if self.cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        caches, shape = self._pop_cache()
        axes = self._spatial_axes(grad_h.ndim)
        dh, dc = grad_h, np.zeros_like(grad_h)
        dxs = np.zeros(shape, dtype=grad_h.dtype)
        for t in range(len(caches) - 1, -1, -1):
            dxs[:, t], dh, dc = _gate_step_backward(
                caches[t], dh, dc, self.params, self.grads, type(self)._transform_grad, axes
            )
        return dxs


class ConvLSTM(_RecurrentCell):
    """ConvLSTM with ``hidden`` filters per gate and odd kernel size ``k``."""

    _transform = staticmethod(_conv_same)
    _transform_grad = staticmethod(_conv_same_grad)
    _bias_view = staticmethod(_conv_bias)

    def __init__(self, cin, hidden, k=3, rng=None, dtype=np.float32):
        super().__init__()
        if k % 2 != 1:
            raise ValueError(f"kernel size must be odd for same padding, got {k}")
        self.cin, self.hidden, self.k = cin, hidden, k
        self._init_gates(
            (hidden, cin, k, k), (hidden, hidden, k, k),
            (cin * k * k, hidden * k * k), (hidden * k * k, hidden * k * k),
            hidden, rng, dtype,
        )

    def initial_state(self, x0):
        shape = (x0.shape[0], self.hidden) + x0.shape[-2:]
        dtype = self.params["w_x_i"].dtype
        return CellState(np.zeros(shape, dtype), np.zeros(shape, dtype))

    def _spatial_axes(self, ndim):
        return (0, 2, 3)

    def _check(self, x, state):
        _check_conv_dims(x, state, self.params)

    @staticmethod
    def param_count(cin, hidden, k):
        return 4 * (k * k * cin * hidden + k * k * hidden * hidden + hidden)


class LSTM(_RecurrentCell):
    """Fully-connected LSTM with ``units`` hidden units."""

    _transform = staticmethod(_dense)
    _transform_grad = staticmethod(_dense_grad)
    _bias_view = staticmethod(_dense_bias)

    def __init__(self, in_dim, units, rng=None, dtype=np.float32):
        super().__init__()
        self.in_dim, self.units = in_dim, units
        self._init_gates(
            (units, in_dim), (units, units),
            (in_dim, units), (units, units),
            units, rng, dtype,
        )

    def initial_state(self, x0):
        dtype = self.params["w_x_i"].dtype
        shape = (x0.shape[0], self.units)
        return CellState(np.zeros(shape, dtype), np.zeros(shape, dtype))

    def _spatial_axes(self, ndim):
        return (0,)

    def _check(self, x, state):
        if x.shape[-1] != self.in_dim:
            raise T.ShapeError(f"LSTM expects input width {self.in_dim}, got {x.shape[-1]}")

    @staticmethod
    def param_count(in_dim, units):
        return 4 * ((in_dim + units) * units + units)
