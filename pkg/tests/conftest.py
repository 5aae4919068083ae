import numpy as np
import pytest

from fightnet.tensor import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


def naive_conv2d(x, w, b, stride, pad):
    """Direct nested-loop cross-correlation, independent of the im2col path."""
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    y = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = b[o]
                for c in range(cin):
                    for u in range(k):
                        for v in range(k):
                            acc += w[o, c, u, v] * xp[c, i * stride + u, j * stride + v]
                y[o, i, j] = acc
    return y


def central_diff(f, x, eps=1e-3):
    """Numerical gradient of scalar ``f`` at ``x`` (x is perturbed in place and restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    d = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if d == 0 else np.linalg.norm(a - b) / d
