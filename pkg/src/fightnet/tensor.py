"""Dense numerical kernels with explicit backward passes.

Tensors are plain ``numpy.ndarray`` objects laid out row-major as
``[C, H, W]`` or, with a leading batch axis, ``[B, C, H, W]``. Every kernel
accepts either layout and returns the same layout it was given.

Convolution is cross-correlation (no kernel flip) with zero padding.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """Raised when tensor dimensions are incompatible with a kernel."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64 bit generator, numpy's documented default).

    The stream for a given seed is identical across platforms.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def _batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [B,C,H,W], got dims {list(x.shape)}")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp, k, stride):
    # [B, C, Ho, Wo, k, k] read-only view into the padded input
    b, c, h, w = xp.shape
    sb, sc, sh, sw = xp.strides
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    return as_strided(
        xp, (b, c, ho, wo, k, k), (sb, sc, sh * stride, sw * stride, sh, sw), writeable=False
    )


def _pad(x, pad):
    if not pad:
        return x
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    return xp


def conv2d(x, w, b, stride: int = 1, pad: int = 0):
    """2-D cross-correlation ``y[o,i,j] = b[o] + sum w[o,c,u,v] * xpad[c, i*s+u, j*s+v]``."""
    xb, squeeze = _batched(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be [Cout,Cin,k,k], got {list(w.shape)}")
    cout, cin, k, _ = w.shape
    if xb.shape[1] != cin:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernel expects {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias must have shape [{cout}], got {list(b.shape)}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    h, wd = xb.shape[2:]
    if k > h + 2 * pad or k > wd + 2 * pad:
        raise ShapeError(f"kernel {k} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")

    xp = _pad(xb, pad)
    cols = _windows(xp, k, stride)
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # [B, Ho, Wo, Cout]
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    if b is not None:
        y += b[None, :, None, None]
    return y[0] if squeeze else y


def conv2d_grad(x, w, grad_y, stride: int = 1, pad: int = 0):
    """Return ``(grad_x, grad_w, grad_b)`` of ``sum(grad_y * conv2d(x, w, b))``."""
    xb, squeeze = _batched(x)
    gy, _ = _batched(grad_y)
    cout, cin, k, _ = w.shape
    if xb.shape[1] != cin:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernel expects {cin}")
    h, wd = xb.shape[2:]
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(wd, k, stride, pad)
    if gy.shape != (xb.shape[0], cout, ho, wo):
        raise ShapeError(
            f"grad_y dims {list(grad_y.shape)} do not match conv output "
            f"{[xb.shape[0], cout, ho, wo]}"
        )

    xp = _pad(xb, pad)
    cols = _windows(xp, k, stride)
    grad_w = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 2, 3]))  # [Cout, Cin, k, k]
    grad_b = gy.sum(axis=(0, 2, 3))

    gcols = np.tensordot(gy, w, axes=([1], [0]))  # [B, Ho, Wo, Cin, k, k]
    gcols = gcols.transpose(0, 3, 1, 2, 4, 5)
    gxp = np.zeros_like(xp)
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for u in range(k):
        for v in range(k):
            gxp[:, :, u:u + he:stride, v:v + we:stride] += gcols[..., u, v]
    grad_x = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x[0] if squeeze else grad_x), grad_w, grad_b


def maxpool2d(x, k: int, stride: int):
    """Max pooling over ``k x k`` windows.

    Returns ``(y, argmax)`` where ``argmax`` holds, for each output cell, the
    flat index into the ``H*W`` plane of its channel. Ties go to the lowest index.
    """
    xb, squeeze = _batched(x)
    h, wd = xb.shape[2:]
    if k > h or k > wd:
        raise ShapeError(f"pool window {k} larger than input {h}x{wd}")
    win = _windows(xb, k, stride)
    bsz, c, ho, wo = win.shape[:4]
    flat = win.reshape(bsz, c, ho, wo, k * k)
    local = flat.argmax(axis=-1)  # first occurrence == lowest flat index
    y = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    du, dv = np.divmod(local, k)
    rows = np.arange(ho)[:, None] * stride + du
    cols = np.arange(wo)[None, :] * stride + dv
    argmax = rows * wd + cols
    if squeeze:
        return y[0], argmax[0]
    return y, argmax


def maxpool2d_grad(argmax, grad_y, input_dims):
    """Route ``grad_y`` back to the recorded maxima of an input of ``input_dims``."""
    input_dims = tuple(input_dims)
    if argmax.shape != grad_y.shape:
        raise ShapeError(f"argmax dims {list(argmax.shape)} != grad_y dims {list(grad_y.shape)}")
    if len(input_dims) != grad_y.ndim or input_dims[:-2] != grad_y.shape[:-2]:
        raise ShapeError(f"input dims {list(input_dims)} incompatible with grad_y {list(grad_y.shape)}")
    plane = input_dims[-2] * input_dims[-1]
    if argmax.size and argmax.max() >= plane:
        raise ShapeError("argmax refers outside the input plane")
    lead = int(np.prod(input_dims[:-2]))
    offsets = (np.arange(lead) * plane).reshape(input_dims[:-2] + (1, 1))
    idx = (argmax + offsets).ravel()
    grad_x = np.bincount(idx, weights=grad_y.ravel(), minlength=lead * plane)
    return grad_x.astype(grad_y.dtype, copy=False).reshape(input_dims)


# -- pointwise maps ---------------------------------------------------------

def sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)


def sigmoid_grad(y, grad_y):
    """Backward of sigmoid given its output ``y``."""
    return grad_y * y * (1 - y)


def tanh(z):
    return np.tanh(z)


def tanh_grad(y, grad_y):
    return grad_y * (1 - y * y)


def relu(z):
    return np.maximum(z, 0)


def relu_grad(z, grad_y):
    return grad_y * (z > 0)


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"operand dims differ: {list(a.shape)} vs {list(b.shape)}")


def add(a, b):
    _check_same(a, b)
    return a + b


def sub(a, b):
    _check_same(a, b)
    return a - b


def hadamard(a, b):
    _check_same(a, b)
    return a * b


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"add": add, "sub": sub, "hadamard": hadamard}


def pointwise(kind: str, a, b=None):
    """Dispatch an elementwise map by name."""
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown pointwise kind {kind!r}")


def pointwise_grad(kind: str, grad_y, a, b=None, y=None):
    """Backward rule for :func:`pointwise`.

    Unary kinds return ``grad_a``; binary kinds return ``(grad_a, grad_b)``.
    ``y`` (the forward output) is reused for sigmoid/tanh when given.
    """
    if kind == "sigmoid":
        return sigmoid_grad(sigmoid(a) if y is None else y, grad_y)
    if kind == "tanh":
        return tanh_grad(np.tanh(a) if y is None else y, grad_y)
    if kind == "relu":
        return relu_grad(a, grad_y)
    if kind == "add":
        return grad_y, grad_y
    if kind == "sub":
        return grad_y, -grad_y
    if kind == "hadamard":
        return grad_y * b, grad_y * a
    raise ValueError(f"unknown pointwise kind {kind!r}")


# -- dense ------------------------------------------------------------------

def matmul_affine(x, W, b):
    """``y = W @ x + b`` for ``x`` of shape ``[n]`` or ``[B, n]``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(
            f"affine dims mismatch: x {list(x.shape)}, W {list(W.shape)}, b {list(b.shape)}"
        )
    return x @ W.T + b


def matmul_affine_grad(x, W, grad_y):
    """Return ``(grad_x, grad_W, grad_b)``."""
    if grad_y.shape[-1] != W.shape[0] or x.shape[-1] != W.shape[1]:
        raise ShapeError("affine backward dims mismatch")
    grad_x = grad_y @ W
    if x.ndim == 1:
        return grad_x, np.outer(grad_y, x), grad_y.copy()
    return grad_x, grad_y.T @ x, grad_y.sum(axis=0)


# -- resize -----------------------------------------------------------------

def _axis_weights(n_in, n_out):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img, out_h: int, out_w: int):
    """Bilinear resize with corner-aligned sampling.

    Output pixel ``i`` samples source row ``i * (H-1)/(out_h-1)``, so the four
    corners map onto the four corners exactly.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    if img.ndim < 2 or img.shape[-1] < 1 or img.shape[-2] < 1:
        raise ShapeError(f"cannot resize dims {list(img.shape)}")
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()
    r0, r1, fr = _axis_weights(h, out_h)
    c0, c1, fc = _axis_weights(w, out_w)
    fr = fr.astype(img.dtype)[:, None]
    fc = fc.astype(img.dtype)[None, :]
    top = img[..., r0, :]
    bot = img[..., r1, :]
    rows = top + (bot - top) * fr
    left = rows[..., c0]
    right = rows[..., c1]
    return left + (right - left) * fc
