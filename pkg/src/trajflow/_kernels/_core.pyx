# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: softmax, layer norm and the gated recurrent sequence.

Same contracts as ``trajflow._kernels.numpy_backend``; matmuls go through
BLAS, everything else is a single C pass per row/timestep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

NAME = "compiled"

ctypedef fused real:
    float
    double


cdef inline real _sig(real x) noexcept nogil:
    if x >= 0:
        return <real>1 / (<real>1 + exp(-x))
    return exp(x) / (<real>1 + exp(x))


cdef void _rm_gemm(char ta, char tb, int m, int n, int k, real alpha,
                   real* a, int lda, real* b, int ldb, real beta,
                   real* c, int ldc) noexcept nogil:
    # Row-major gemm on top of the Fortran interface: compute C^T = op(B)^T op(A)^T.
    if real is float:
        sgemm(&tb, &ta, &n, &m, &k, &alpha, <float*>b, &ldb, <float*>a, &lda,
              &beta, <float*>c, &ldc)
    else:
        dgemm(&tb, &ta, &n, &m, &k, &alpha, <double*>b, &ldb, <double*>a, &lda,
              &beta, <double*>c, &ldc)


def softmax_forward(real[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef real m, s
    out_arr = np.empty((n, d), dtype=np.float32 if real is float else np.float64)
    cdef real[:, ::1] y = out_arr
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0
            for j in range(d):
                y[i, j] = exp(x[i, j] - m)
                s += y[i, j]
            for j in range(d):
                y[i, j] /= s
    return out_arr


def softmax_backward(real[:, ::1] y, real[:, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    cdef real dot
    out_arr = np.empty((n, d), dtype=np.float32 if real is float else np.float64)
    cdef real[:, ::1] dx = out_arr
    with nogil:
        for i in range(n):
            dot = 0
            for j in range(d):
                dot += y[i, j] * dy[i, j]
            for j in range(d):
                dx[i, j] = y[i, j] * (dy[i, j] - dot)
    return out_arr


def layernorm_forward(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef real mu, var, dev, rs
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((n, d), dtype=dtype)
    mean_arr = np.empty(n, dtype=dtype)
    rstd_arr = np.empty(n, dtype=dtype)
    cdef real[:, ::1] y = y_arr
    cdef real[::1] mean = mean_arr, rstd = rstd_arr
    with nogil:
        for i in range(n):
            mu = 0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0
            for j in range(d):
                dev = x[i, j] - mu
                var += dev * dev
            var /= d
            rs = <real>1 / <real>((var + eps) ** 0.5)
            mean[i] = mu
            rstd[i] = rs
            for j in range(d):
                y[i, j] = (x[i, j] - mu) * rs * gamma[j] + beta[j]
    return y_arr, mean_arr, rstd_arr


def layernorm_backward(real[:, ::1] x, real[::1] gamma, real[::1] mean,
                       real[::1] rstd, real[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef real s1, s2, xhat, dyg
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((n, d), dtype=dtype)
    dgamma_arr = np.zeros(d, dtype=dtype)
    dbeta_arr = np.zeros(d, dtype=dtype)
    cdef real[:, ::1] dx = dx_arr
    cdef real[::1] dgamma = dgamma_arr, dbeta = dbeta_arr
    with nogil:
        for i in range(n):
            s1 = 0
            s2 = 0
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dyg = dy[i, j] * gamma[j]
                s1 += dyg
                s2 += dyg * xhat
                dgamma[j] += dy[i, j] * xhat
                dbeta[j] += dy[i, j]
            s1 /= d
            s2 /= d
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dx[i, j] = rstd[i] * (dy[i, j] * gamma[j] - s1 - xhat * s2)
    return dx_arr, dgamma_arr, dbeta_arr


def lstm_forward(real[:, :, ::1] x, real[:, ::1] wx, real[:, ::1] wh, real[::1] b):
    cdef int t_len = <int>x.shape[0], batch = <int>x.shape[1], i_dim = <int>x.shape[2]
    cdef int h4 = <int>wx.shape[1], h = h4 // 4
    cdef Py_ssize_t t, bi, j
    cdef real ai, af, ag, ao, gi, gf, gg, go, cc, cprev
    dtype = np.float32 if real is float else np.float64
    h_arr = np.zeros((t_len, batch, h), dtype=dtype)
    c_arr = np.zeros((t_len, batch, h), dtype=dtype)
    g_arr = np.empty((t_len, batch, h4), dtype=dtype)
    cdef real[:, :, ::1] hs = h_arr, cs = c_arr, gates = g_arr
    with nogil:
        # input projection for all timesteps in one call
        _rm_gemm(c'N', c'N', t_len * batch, h4, i_dim, <real>1, &x[0, 0, 0], i_dim,
                 &wx[0, 0], h4, <real>0, &gates[0, 0, 0], h4)
        for t in range(t_len):
            if t > 0:
                _rm_gemm(c'N', c'N', batch, h4, h, <real>1, &hs[t - 1, 0, 0], h,
                         &wh[0, 0], h4, <real>1, &gates[t, 0, 0], h4)
            for bi in range(batch):
                for j in range(h):
                    ai = gates[t, bi, j] + b[j]
                    af = gates[t, bi, h + j] + b[h + j]
                    ag = gates[t, bi, 2 * h + j] + b[2 * h + j]
                    ao = gates[t, bi, 3 * h + j] + b[3 * h + j]
                    gi = _sig(ai)
                    gf = _sig(af)
                    gg = tanh(ag)
                    go = _sig(ao)
                    cprev = cs[t - 1, bi, j] if t > 0 else <real>0
                    cc = gf * cprev + gi * gg
                    gates[t, bi, j] = gi
                    gates[t, bi, h + j] = gf
                    gates[t, bi, 2 * h + j] = gg
                    gates[t, bi, 3 * h + j] = go
                    cs[t, bi, j] = cc
                    hs[t, bi, j] = go * tanh(cc)
    return h_arr, c_arr, g_arr


def lstm_backward(real[:, :, ::1] x, real[:, ::1] wx, real[:, ::1] wh,
                  real[:, :, ::1] h, real[:, :, ::1] c, real[:, :, ::1] gates,
                  real[:, :, ::1] dh_out):
    cdef int t_len = <int>x.shape[0], batch = <int>x.shape[1], i_dim = <int>x.shape[2]
    cdef int h4 = <int>wx.shape[1], hd = h4 // 4
    cdef Py_ssize_t t, bi, j
    cdef real gi, gf, gg, go, tc, dh, dc, cprev
    dtype = np.float32 if real is float else np.float64
    da_arr = np.empty((t_len, batch, h4), dtype=dtype)
    dhrec_arr = np.zeros((batch, hd), dtype=dtype)
    dcnext_arr = np.zeros((batch, hd), dtype=dtype)
    dx_arr = np.empty((t_len, batch, i_dim), dtype=dtype)
    dwx_arr = np.empty((i_dim, h4), dtype=dtype)
    dwh_arr = np.empty((hd, h4), dtype=dtype)
    db_arr = np.zeros(h4, dtype=dtype)
    hprev_arr = np.zeros((t_len, batch, hd), dtype=dtype)
    hprev_arr[1:] = np.asarray(h)[0:t_len - 1]
    cdef real[:, :, ::1] da = da_arr, dx = dx_arr, hprev = hprev_arr
    cdef real[:, ::1] dhrec = dhrec_arr, dcnext = dcnext_arr
    cdef real[:, ::1] dwx = dwx_arr, dwh = dwh_arr
    cdef real[::1] db = db_arr
    with nogil:
        for t in range(t_len - 1, -1, -1):
            for bi in range(batch):
                for j in range(hd):
                    gi = gates[t, bi, j]
                    gf = gates[t, bi, hd + j]
                    gg = gates[t, bi, 2 * hd + j]
                    go = gates[t, bi, 3 * hd + j]
                    tc = tanh(c[t, bi, j])
                    dh = dh_out[t, bi, j] + dhrec[bi, j]
                    dc = dh * go * (<real>1 - tc * tc) + dcnext[bi, j]
                    cprev = c[t - 1, bi, j] if t > 0 else <real>0
                    da[t, bi, j] = dc * gg * gi * (<real>1 - gi)
                    da[t, bi, hd + j] = dc * cprev * gf * (<real>1 - gf)
                    da[t, bi, 2 * hd + j] = dc * gi * (<real>1 - gg * gg)
                    da[t, bi, 3 * hd + j] = dh * tc * go * (<real>1 - go)
                    dcnext[bi, j] = dc * gf
            _rm_gemm(c'N', c'T', batch, hd, h4, <real>1, &da[t, 0, 0], h4,
                     &wh[0, 0], h4, <real>0, &dhrec[0, 0], hd)
        _rm_gemm(c'N', c'T', t_len * batch, i_dim, h4, <real>1, &da[0, 0, 0], h4,
                 &wx[0, 0], h4, <real>0, &dx[0, 0, 0], i_dim)
        _rm_gemm(c'T', c'N', i_dim, h4, t_len * batch, <real>1, &x[0, 0, 0], i_dim,
                 &da[0, 0, 0], h4, <real>0, &dwx[0, 0], h4)
        _rm_gemm(c'T', c'N', hd, h4, t_len * batch, <real>1, &hprev[0, 0, 0], hd,
                 &da[0, 0, 0], h4, <real>0, &dwh[0, 0], h4)
        for t in range(t_len):
            for bi in range(batch):
                for j in range(h4):
                    db[j] += da[t, bi, j]
    return dx_arr, dwx_arr, dwh_arr, db_arr
