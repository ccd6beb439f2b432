# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; one-for-one mirror of ``numpy_backend``.

The decoding and training loops are sequences of small dense ops where a
general array library spends most of its time on dispatch overhead, so each
op is a single fused C loop here.  Layouts match the numpy backend exactly
(float64, C-contiguous, LSTM gates in (i, f, o, g) column blocks).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh

cnp.import_array()


cdef inline double _sig(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def softmax(double[::1] z):
    cdef Py_ssize_t n = z.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double[::1] o = out
    cdef double mx = z[0]
    cdef double total = 0.0
    cdef Py_ssize_t i
    for i in range(1, n):
        if z[i] > mx:
            mx = z[i]
    for i in range(n):
        o[i] = exp(z[i] - mx)
        total += o[i]
    for i in range(n):
        o[i] /= total
    return out


def affine(double[::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t din = w.shape[0]
    cdef Py_ssize_t dout = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(dout)
    cdef double[::1] y = out
    cdef Py_ssize_t i, j
    cdef double xi
    for j in range(dout):
        y[j] = b[j]
    for i in range(din):
        xi = x[i]
        if xi == 0.0:
            continue
        for j in range(dout):
            y[j] += xi * w[i, j]
    return out


def affine_bwd(double[::1] dy, double[::1] x, double[:, ::1] w,
               double[:, ::1] dw, double[::1] db):
    cdef Py_ssize_t din = w.shape[0]
    cdef Py_ssize_t dout = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(din)
    cdef double[::1] dx = out
    cdef Py_ssize_t i, j
    cdef double xi, acc
    for j in range(dout):
        db[j] += dy[j]
    for i in range(din):
        xi = x[i]
        acc = 0.0
        for j in range(dout):
            dw[i, j] += xi * dy[j]
            acc += w[i, j] * dy[j]
        dx[i] = acc
    return out


def lstm_fwd(double[::1] x, double[::1] h, double[::1] c,
             double[:, ::1] wx, double[:, ::1] wh, double[::1] b):
    cdef Py_ssize_t din = wx.shape[0]
    cdef Py_ssize_t d4 = wx.shape[1]
    cdef Py_ssize_t d = d4 // 4
    cdef cnp.ndarray[double, ndim=1] z_arr = np.empty(d4)
    cdef cnp.ndarray[double, ndim=1] h2_arr = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] c2_arr = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] gates_arr = np.empty(d4)
    cdef double[::1] z = z_arr
    cdef double[::1] h2 = h2_arr
    cdef double[::1] c2 = c2_arr
    cdef double[::1] gates = gates_arr
    cdef Py_ssize_t i, j
    cdef double v, ig, fg, og, gg
    for j in range(d4):
        z[j] = b[j]
    for i in range(din):
        v = x[i]
        if v != 0.0:
            for j in range(d4):
                z[j] += v * wx[i, j]
    for i in range(d):
        v = h[i]
        if v != 0.0:
            for j in range(d4):
                z[j] += v * wh[i, j]
    for i in range(d):
        ig = _sig(z[i])
        fg = _sig(z[d + i])
        og = _sig(z[2 * d + i])
        gg = tanh(z[3 * d + i])
        gates[i] = ig
        gates[d + i] = fg
        gates[2 * d + i] = og
        gates[3 * d + i] = gg
        c2[i] = fg * c[i] + ig * gg
        h2[i] = og * tanh(c2[i])
    return h2_arr, c2_arr, gates_arr


def lstm_bwd(double[::1] dh2, double[::1] dc2, double[::1] x, double[::1] h,
             double[::1] c, double[::1] c2, double[::1] gates,
             double[:, ::1] wx, double[:, ::1] wh,
             double[:, ::1] dwx, double[:, ::1] dwh, double[::1] db):
    cdef Py_ssize_t din = wx.shape[0]
    cdef Py_ssize_t d4 = wx.shape[1]
    cdef Py_ssize_t d = d4 // 4
    cdef cnp.ndarray[double, ndim=1] dz_arr = np.empty(d4)
    cdef cnp.ndarray[double, ndim=1] dx_arr = np.empty(din)
    cdef cnp.ndarray[double, ndim=1] dh_arr = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] dc_arr = np.empty(d)
    cdef double[::1] dz = dz_arr
    cdef double[::1] dx = dx_arr
    cdef double[::1] dh = dh_arr
    cdef double[::1] dc = dc_arr
    cdef Py_ssize_t i, j
    cdef double tc, dct, ig, fg, og, gg, v, acc
    for i in range(d):
        ig = gates[i]
        fg = gates[d + i]
        og = gates[2 * d + i]
        gg = gates[3 * d + i]
        tc = tanh(c2[i])
        dct = dc2[i] + dh2[i] * og * (1.0 - tc * tc)
        dz[i] = dct * gg * ig * (1.0 - ig)
        dz[d + i] = dct * c[i] * fg * (1.0 - fg)
        dz[2 * d + i] = dh2[i] * tc * og * (1.0 - og)
        dz[3 * d + i] = dct * ig * (1.0 - gg * gg)
        dc[i] = dct * fg
    for j in range(d4):
        db[j] += dz[j]
    for i in range(din):
        v = x[i]
        acc = 0.0
        for j in range(d4):
            dwx[i, j] += v * dz[j]
            acc += wx[i, j] * dz[j]
        dx[i] = acc
    for i in range(d):
        v = h[i]
        acc = 0.0
        for j in range(d4):
            dwh[i, j] += v * dz[j]
            acc += wh[i, j] * dz[j]
        dh[i] = acc
    return dx_arr, dh_arr, dc_arr


def attention_fwd(double[::1] q, double[:, ::1] hb, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t dq = w.shape[0]
    cdef Py_ssize_t n = w.shape[1]
    cdef Py_ssize_t d = hb.shape[1]
    cdef cnp.ndarray[double, ndim=1] z_arr = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] a_arr = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] m_arr = np.zeros(d)
    cdef double[::1] z = z_arr
    cdef double[::1] a = a_arr
    cdef double[::1] m = m_arr
    cdef Py_ssize_t i, j
    cdef double v, mx, total
    for j in range(n):
        z[j] = b[j]
    for i in range(dq):
        v = q[i]
        if v != 0.0:
            for j in range(n):
                z[j] += v * w[i, j]
    # softmax over relu(z)
    mx = 0.0
    for j in range(n):
        v = z[j] if z[j] > 0.0 else 0.0
        a[j] = v
        if v > mx:
            mx = v
    total = 0.0
    for j in range(n):
        a[j] = exp(a[j] - mx)
        total += a[j]
    for j in range(n):
        a[j] /= total
        v = a[j]
        for i in range(d):
            m[i] += v * hb[j, i]
    return m_arr, a_arr, z_arr


def attention_bwd(double[::1] dm, double[::1] q, double[:, ::1] hb,
                  double[:, ::1] w, double[::1] a, double[::1] z,
                  double[:, ::1] dw, double[::1] db):
    cdef Py_ssize_t n = w.shape[1]
    cdef Py_ssize_t d = hb.shape[1]
    cdef cnp.ndarray[double, ndim=1] dz_arr = np.empty(n)
    cdef double[::1] dz = dz_arr
    cdef Py_ssize_t i, j
    cdef double s, da_j
    # da = hb @ dm ; softmax backward ; relu mask, fused
    s = 0.0
    for j in range(n):
        da_j = 0.0
        for i in range(d):
            da_j += hb[j, i] * dm[i]
        dz[j] = da_j
        s += a[j] * da_j
    for j in range(n):
        dz[j] = a[j] * (dz[j] - s)
        if z[j] <= 0.0:
            dz[j] = 0.0
    return affine_bwd(dz_arr, q, w, dw, db)


def adam_step(double[::1] p, double[::1] grad, double[::1] m, double[::1] v,
              int t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i
    cdef double g, mhat, vhat
    for i in range(n):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * mhat / (sqrt(vhat) + eps)
