"""Pure-numpy implementations of the hot kernels.

Fallback backend used when the compiled extension is unavailable (or when
TRAJFLOW_KERNELS=numpy).  Function signatures and return conventions are
identical to ``trajflow._kernels._core``.
"""

import numpy as np

NAME = "numpy"


def softmax_forward(x):
    """Row-wise softmax of a 2-d array (last axis), max-subtracted."""
    m = np.max(x, axis=1, keepdims=True)
    y = np.exp(x - m)
    y /= np.sum(y, axis=1, keepdims=True)
    return y


def softmax_backward(y, dy):
    dot = np.sum(y * dy, axis=1, keepdims=True)
    return y * (dy - dot)


def layernorm_forward(x, gamma, beta, eps):
    """Normalize each row of ``x`` [N, D] to zero mean / unit variance, then affine.

    Returns (y, mean, rstd); mean/rstd are cached for the backward pass.
    """
    mean = np.mean(x, axis=1)
    var = np.mean((x - mean[:, None]) ** 2, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gamma[None, :] + beta[None, :]
    return y, mean, rstd


def layernorm_backward(x, gamma, mean, rstd, dy):
    n, d = x.shape
    xhat = (x - mean[:, None]) * rstd[:, None]
    dyg = dy * gamma[None, :]
    s1 = np.sum(dyg, axis=1, keepdims=True)
    s2 = np.sum(dyg * xhat, axis=1, keepdims=True)
    dx = rstd[:, None] * (dyg - s1 / d - xhat * s2 / d)
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    return dx, dgamma, dbeta


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(x, wx, wh, b):
    """Gated recurrent sequence over x [T, B, I].

    Gate layout along the last axis of ``wx``/``wh``/``b`` is (input, forget,
    cell, output), each of width H.  Returns (h [T,B,H], c [T,B,H],
    gates [T,B,4H]) where ``gates`` holds post-activation gate values, cached
    for the backward pass.
    """
    t_len, batch, _ = x.shape
    h4 = wx.shape[1]
    h = h4 // 4
    hs = np.zeros((t_len, batch, h), dtype=x.dtype)
    cs = np.zeros((t_len, batch, h), dtype=x.dtype)
    gates = x.reshape(t_len * batch, -1) @ wx
    gates = gates.reshape(t_len, batch, h4) + b[None, None, :]
    h_prev = np.zeros((batch, h), dtype=x.dtype)
    c_prev = np.zeros((batch, h), dtype=x.dtype)
    for t in range(t_len):
        a = gates[t] + h_prev @ wh
        gi = _sigmoid(a[:, 0 * h : 1 * h])
        gf = _sigmoid(a[:, 1 * h : 2 * h])
        gg = np.tanh(a[:, 2 * h : 3 * h])
        go = _sigmoid(a[:, 3 * h : 4 * h])
        c_prev = gf * c_prev + gi * gg
        h_prev = go * np.tanh(c_prev)
        gates[t, :, 0 * h : 1 * h] = gi
        gates[t, :, 1 * h : 2 * h] = gf
        gates[t, :, 2 * h : 3 * h] = gg
        gates[t, :, 3 * h : 4 * h] = go
        cs[t] = c_prev
        hs[t] = h_prev
    return hs, cs, gates


def lstm_backward(x, wx, wh, h, c, gates, dh_out):
    """Reverse-time gradients for lstm_forward.

    Returns (dx, dwx, dwh, db).
    """
    t_len, batch, _ = x.shape
    h4 = wx.shape[1]
    hd = h4 // 4
    da = np.empty((t_len, batch, h4), dtype=x.dtype)
    dh_rec = np.zeros((batch, hd), dtype=x.dtype)
    dc_next = np.zeros((batch, hd), dtype=x.dtype)
    for t in range(t_len - 1, -1, -1):
        gi = gates[t, :, 0 * hd : 1 * hd]
        gf = gates[t, :, 1 * hd : 2 * hd]
        gg = gates[t, :, 2 * hd : 3 * hd]
        go = gates[t, :, 3 * hd : 4 * hd]
        tc = np.tanh(c[t])
        dh = dh_out[t] + dh_rec
        dc = dh * go * (1.0 - tc * tc) + dc_next
        c_prev = c[t - 1] if t > 0 else np.zeros_like(c[0])
        da[t, :, 0 * hd : 1 * hd] = dc * gg * gi * (1.0 - gi)
        da[t, :, 1 * hd : 2 * hd] = dc * c_prev * gf * (1.0 - gf)
        da[t, :, 2 * hd : 3 * hd] = dc * gi * (1.0 - gg * gg)
        da[t, :, 3 * hd : 4 * hd] = dh * tc * go * (1.0 - go)
        dc_next = dc * gf
        dh_rec = da[t] @ wh.T
    da2 = da.reshape(t_len * batch, h4)
    dx = (da2 @ wx.T).reshape(x.shape)
    dwx = x.reshape(t_len * batch, -1).T @ da2
    h_prev = np.concatenate([np.zeros((1, batch, hd), dtype=x.dtype), h[:-1]], axis=0)
    dwh = h_prev.reshape(t_len * batch, hd).T @ da2
    db = np.sum(da2, axis=0)
    return dx, dwx, dwh, db
