"""Pure numpy implementations of the sequential hot kernels.

These are the fallback (and the reference) for the Cython versions in
`_speedups.pyx`.  Both backends share the same signatures and cache
layout, so a forward from one can be paired with a backward from the
other in equivalence tests.

LSTM gate layout along the 4H axis is [input, forget, candidate, output].
"""

from __future__ import annotations

import numpy as np


def _sigmoid(z):
    out = np.exp(-z)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def lstm_forward(x, w_x, w_h, b, h0, c0):
    """Run a single-direction LSTM over a whole sequence.

    x: (T, D), w_x: (D, 4H), w_h: (H, 4H), b: (4H,), h0/c0: (H,).
    Returns (h, cache) where h is (T, H) and cache feeds lstm_backward.
    """
    T = x.shape[0]
    H = h0.shape[0]
    h = np.empty((T, H), dtype=x.dtype)
    gates = np.empty((T, 4 * H), dtype=x.dtype)
    h_prev = np.empty((T, H), dtype=x.dtype)
    c_prev = np.empty((T, H), dtype=x.dtype)
    tanh_c = np.empty((T, H), dtype=x.dtype)
    ht, ct = h0, c0
    for t in range(T):
        h_prev[t] = ht
        c_prev[t] = ct
        z = x[t] @ w_x + ht @ w_h + b
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        g = np.tanh(z[2 * H : 3 * H])
        o = _sigmoid(z[3 * H :])
        gates[t, :H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = g
        gates[t, 3 * H :] = o
        ct = f * ct + i * g
        tc = np.tanh(ct)
        tanh_c[t] = tc
        ht = o * tc
        h[t] = ht
    cache = (x, w_x, w_h, gates, h_prev, c_prev, tanh_c)
    return h, cache


def lstm_backward(dh, cache):
    """Backward pass matching lstm_forward.

    dh: (T, H) upstream gradient on the hidden sequence.
    Returns (dx, dw_x, dw_h, db, dh0, dc0).
    """
    x, w_x, w_h, gates, h_prev, c_prev, tanh_c = cache
    T, H = dh.shape
    dx = np.empty_like(x)
    dw_x = np.zeros_like(w_x)
    dw_h = np.zeros_like(w_h)
    db = np.zeros_like(gates[0])
    dh_next = np.zeros(H, dtype=x.dtype)
    dc_next = np.zeros(H, dtype=x.dtype)
    dz = np.empty(4 * H, dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H : 2 * H]
        g = gates[t, 2 * H : 3 * H]
        o = gates[t, 3 * H :]
        tc = tanh_c[t]
        dht = dh[t] + dh_next
        dc = dht * o * (1.0 - tc * tc) + dc_next
        dz[:H] = dc * g * i * (1.0 - i)
        dz[H : 2 * H] = dc * c_prev[t] * f * (1.0 - f)
        dz[2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[3 * H :] = dht * tc * o * (1.0 - o)
        dc_next = dc * f
        dx[t] = dz @ w_x.T
        dw_x += np.outer(x[t], dz)
        dw_h += np.outer(h_prev[t], dz)
        db += dz
        dh_next = dz @ w_h.T
    return dx, dw_x, dw_h, db, dh_next, dc_next


def charcnn_forward(chars, filters):
    """Width-w 1-D convolution over character embeddings plus max-pool.

    chars: (C, Dc) embedded character sequence; filters: (W, Dc, F).
    Sequences shorter than the filter width are zero-padded on the right
    so at least one window exists.  Returns (out, cache) with out (F,).
    """
    C, Dc = chars.shape
    W, _, F = filters.shape
    if C < W:
        padded = np.zeros((W, Dc), dtype=chars.dtype)
        padded[:C] = chars
    else:
        padded = chars
    n_win = padded.shape[0] - W + 1
    flat = filters.reshape(W * Dc, F)
    conv = np.empty((n_win, F), dtype=chars.dtype)
    for k in range(n_win):
        conv[k] = padded[k : k + W].reshape(-1) @ flat
    amax = conv.argmax(axis=0)
    out = conv[amax, np.arange(F)]
    cache = (padded, filters, amax, C)
    return out, cache


def charcnn_backward(dout, cache):
    """Backward pass matching charcnn_forward.

    Returns (dchars, dfilters); gradient routes through each filter's
    argmax window only.
    """
    padded, filters, amax, C = cache
    W, _, F = filters.shape
    dpadded = np.zeros_like(padded)
    dfilters = np.zeros_like(filters)
    for f in range(F):
        k = amax[f]
        dfilters[:, :, f] += dout[f] * padded[k : k + W]
        dpadded[k : k + W] += dout[f] * filters[:, :, f]
    return dpadded[:C], dfilters
