"""Pure-numpy implementations of the hot kernels.

This is the fallback backend; the compiled extension in ``_native.pyx``
mirrors these functions one for one.  All arrays are float64 and
C-contiguous.  Backward kernels accumulate (+=) into caller-owned gradient
buffers so a whole batch can share them.

LSTM gate layout: the fused weight matrices hold the four gates in column
blocks ordered (input, forget, output, candidate), i.e. ``wx[:, 0:d]`` is
the input gate, ``wx[:, 3d:4d]`` the tanh candidate.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z):
    """Max-stabilized softmax of a 1-D vector."""
    e = np.exp(z - z.max())
    return e / e.sum()


def affine(x, w, b):
    """y = x @ w + b for a single vector x."""
    return x @ w + b


def affine_bwd(dy, x, w, dw, db):
    """Backward of :func:`affine`; accumulates dw, db and returns dx."""
    dw += np.outer(x, dy)
    db += dy
    return w @ dy


def lstm_fwd(x, h, c, wx, wh, b):
    """One LSTM cell step.

    Returns (h_next, c_next, gates) where ``gates`` is the (4d,) vector of
    activated gate values kept for the backward pass.
    """
    d = h.shape[0]
    z = x @ wx + h @ wh + b
    gates = np.empty(4 * d)
    gates[: 3 * d] = _sigmoid(z[: 3 * d])
    gates[3 * d :] = np.tanh(z[3 * d :])
    i, f, o, g = gates[:d], gates[d : 2 * d], gates[2 * d : 3 * d], gates[3 * d :]
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    return h2, c2, gates


def lstm_bwd(dh2, dc2, x, h, c, c2, gates, wx, wh, dwx, dwh, db):
    """Backward of :func:`lstm_fwd`.

    Accumulates weight/bias gradients and returns (dx, dh, dc) for the
    step's inputs.  ``dc2`` is the cell gradient flowing in from the next
    step (zeros at the sequence end).
    """
    d = h.shape[0]
    i, f, o, g = gates[:d], gates[d : 2 * d], gates[2 * d : 3 * d], gates[3 * d :]
    tc = np.tanh(c2)
    dct = dc2 + dh2 * o * (1.0 - tc * tc)
    dz = np.empty(4 * d)
    dz[:d] = dct * g * i * (1.0 - i)
    dz[d : 2 * d] = dct * c * f * (1.0 - f)
    dz[2 * d : 3 * d] = dh2 * tc * o * (1.0 - o)
    dz[3 * d :] = dct * i * (1.0 - g * g)
    dwx += np.outer(x, dz)
    dwh += np.outer(h, dz)
    db += dz
    dx = wx @ dz
    dh = wh @ dz
    dc = dct * f
    return dx, dh, dc


def attention_fwd(q, hb, w, b):
    """Soft attention over the rows of ``hb``.

    q is the query (concatenated token embedding and hidden state), hb the
    (N, d) matrix of attended vectors.  Weights are
    softmax(relu(q @ w + b)).  Returns (mixed vector, weights, pre-relu
    scores); the last two feed the backward pass.
    """
    z = q @ w + b
    a = softmax(np.maximum(z, 0.0))
    return a @ hb, a, z


def attention_bwd(dm, q, hb, w, a, z, dw, db):
    """Backward of :func:`attention_fwd` w.r.t. the query and weights.

    ``hb`` is treated as a constant (no gradient flows into the attended
    vectors).  Returns dq.
    """
    da = hb @ dm
    dr = a * (da - a @ da)
    dz = np.where(z > 0.0, dr, 0.0)
    return affine_bwd(dz, q, w, dw, db)


def adam_step(p, grad, m, v, t, lr, beta1, beta2, eps):
    """In-place Adam update with bias correction; arrays are 1-D views."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
