"""Low-level numpy layers with explicit forward and backward passes.

Everything here works on single examples (1-D state vectors); the training
loop iterates pairs and accumulates gradients, which at desk scale is both
fast enough and free of padding bookkeeping.  All arrays are float64 so the
finite-difference checks in the test suite run at full precision.
"""

from __future__ import annotations

import numpy as np


def sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def softplus(a):
    return np.logaddexp(0.0, a)


def softmax(a):
    shifted = a - np.max(a)
    e = np.exp(shifted)
    return e / e.sum()


def log_softmax(a):
    shifted = a - np.max(a)
    return shifted - np.log(np.exp(shifted).sum())


def softmax_backward(p, dp):
    """Backward of p = softmax(a): returns da."""
    return p * (dp - np.dot(dp, p))


class GRUCache:
    __slots__ = ("x", "h", "z", "r", "n")

    def __init__(self, x, h, z, r, n):
        self.x, self.h, self.z, self.r, self.n = x, h, z, r, n


def gru_forward(x, h, Wx, Wh, b, cache_out=None):
    """One GRU step: h' = z*h + (1-z)*n with update gate z and reset gate r.

    ``Wx`` is (Dx, 3H), ``Wh`` is (H, 3H), gate order [z, r, n].
    """
    H = h.shape[0]
    ax = x @ Wx + b
    ah = h @ Wh
    z = sigmoid(ax[:H] + ah[:H])
    r = sigmoid(ax[H:2 * H] + ah[H:2 * H])
    n = np.tanh(ax[2 * H:] + r * ah[2 * H:])
    h_new = z * h + (1.0 - z) * n
    if cache_out is not None:
        cache_out.append(GRUCache(x, h, z, r, n))
    return h_new


def gru_backward(dh_new, cache: GRUCache, Wx, Wh, dWx, dWh, db):
    """Backward of :func:`gru_forward`; accumulates into dWx/dWh/db.

    Returns (dx, dh) for the step inputs.
    """
    x, h, z, r, n = cache.x, cache.h, cache.z, cache.r, cache.n
    H = h.shape[0]
    ah_n = h @ Wh[:, 2 * H:]

    dz = dh_new * (h - n)
    dn = dh_new * (1.0 - z)
    dh = dh_new * z

    da_n = dn * (1.0 - n * n)
    da_r = (da_n * ah_n) * (r * (1.0 - r))
    da_z = dz * (z * (1.0 - z))

    da = np.concatenate([da_z, da_r, da_n])
    dWx += np.outer(x, da)
    db += da
    # The n-branch applies the reset gate after the hidden matmul, so its
    # effective upstream gradient is da_n * r.
    dWh[:, :2 * H] += np.outer(h, da[:2 * H])
    dWh[:, 2 * H:] += np.outer(h, da_n * r)

    dx = Wx @ da
    dh += Wh[:, :2 * H] @ da[:2 * H]
    dh += Wh[:, 2 * H:] @ (da_n * r)
    return dx, dh


class DenseCache:
    __slots__ = ("x", "out", "pre")

    def __init__(self, x, out, pre=None):
        self.x, self.out, self.pre = x, out, pre


def dense_tanh(x, W, b, cache_out=None):
    out = np.tanh(x @ W + b)
    if cache_out is not None:
        cache_out.append(DenseCache(x, out))
    return out


def dense_tanh_backward(dout, cache: DenseCache, W, dW, db):
    da = dout * (1.0 - cache.out * cache.out)
    dW += np.outer(cache.x, da)
    db += da
    return W @ da


def scalar_softplus(a: float) -> float:
    return float(np.logaddexp(0.0, a))


def scalar_softplus_backward(dout: float, a: float) -> float:
    return dout * float(sigmoid(np.asarray([a]))[0])
