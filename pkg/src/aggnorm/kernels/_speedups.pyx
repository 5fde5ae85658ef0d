# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython versions of the sequential hot kernels.

Same signatures and cache layout as `pure.py`; selected at import by
`aggnorm.kernels` when the compiled module is present.
"""

import numpy as np

cimport cython
from libc.math cimport exp, tanh

ctypedef fused floating:
    float
    double


cdef inline floating _sig(floating z) noexcept nogil:
    return <floating>(1.0 / (1.0 + exp(-<double>z)))


def lstm_forward(floating[:, ::1] x, floating[:, ::1] w_x, floating[:, ::1] w_h,
                 floating[::1] b, floating[::1] h0, floating[::1] c0):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t H = h0.shape[0]
    cdef Py_ssize_t G = 4 * H

    dtype = np.float32 if floating is float else np.float64
    h_arr = np.empty((T, H), dtype=dtype)
    gates_arr = np.empty((T, G), dtype=dtype)
    h_prev_arr = np.empty((T, H), dtype=dtype)
    c_prev_arr = np.empty((T, H), dtype=dtype)
    tanh_c_arr = np.empty((T, H), dtype=dtype)
    z_arr = np.empty(G, dtype=dtype)
    c_arr = np.empty(H, dtype=dtype)

    cdef floating[:, ::1] h = h_arr
    cdef floating[:, ::1] gates = gates_arr
    cdef floating[:, ::1] h_prev = h_prev_arr
    cdef floating[:, ::1] c_prev = c_prev_arr
    cdef floating[:, ::1] tanh_c = tanh_c_arr
    cdef floating[::1] z = z_arr
    cdef floating[::1] c = c_arr

    cdef Py_ssize_t t, d, j, k
    cdef floating xv, hv, iv, fv, gv, ov

    c[:] = c0
    with nogil:
        for t in range(T):
            if t == 0:
                for k in range(H):
                    h_prev[t, k] = h0[k]
            else:
                for k in range(H):
                    h_prev[t, k] = h[t - 1, k]
            for k in range(H):
                c_prev[t, k] = c[k]
            for j in range(G):
                z[j] = b[j]
            for d in range(D):
                xv = x[t, d]
                for j in range(G):
                    z[j] = z[j] + xv * w_x[d, j]
            for k in range(H):
                hv = h_prev[t, k]
                for j in range(G):
                    z[j] = z[j] + hv * w_h[k, j]
            for k in range(H):
                iv = _sig(z[k])
                fv = _sig(z[H + k])
                gv = <floating>tanh(<double>z[2 * H + k])
                ov = _sig(z[3 * H + k])
                gates[t, k] = iv
                gates[t, H + k] = fv
                gates[t, 2 * H + k] = gv
                gates[t, 3 * H + k] = ov
                c[k] = fv * c[k] + iv * gv
                tanh_c[t, k] = <floating>tanh(<double>c[k])
                h[t, k] = ov * tanh_c[t, k]

    cache = (np.asarray(x), np.asarray(w_x), np.asarray(w_h),
             gates_arr, h_prev_arr, c_prev_arr, tanh_c_arr)
    return h_arr, cache


def lstm_backward(floating[:, ::1] dh, cache):
    x_arr, w_x_arr, w_h_arr, gates_arr, h_prev_arr, c_prev_arr, tanh_c_arr = cache
    cdef floating[:, ::1] x = x_arr
    cdef floating[:, ::1] w_x = w_x_arr
    cdef floating[:, ::1] w_h = w_h_arr
    cdef floating[:, ::1] gates = gates_arr
    cdef floating[:, ::1] h_prev = h_prev_arr
    cdef floating[:, ::1] c_prev = c_prev_arr
    cdef floating[:, ::1] tanh_c = tanh_c_arr

    cdef Py_ssize_t T = dh.shape[0]
    cdef Py_ssize_t H = dh.shape[1]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t G = 4 * H

    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty((T, D), dtype=dtype)
    dw_x_arr = np.zeros((D, G), dtype=dtype)
    dw_h_arr = np.zeros((H, G), dtype=dtype)
    db_arr = np.zeros(G, dtype=dtype)
    dh_next_arr = np.zeros(H, dtype=dtype)
    dc_next_arr = np.zeros(H, dtype=dtype)
    dz_arr = np.empty(G, dtype=dtype)

    cdef floating[:, ::1] dx = dx_arr
    cdef floating[:, ::1] dw_x = dw_x_arr
    cdef floating[:, ::1] dw_h = dw_h_arr
    cdef floating[::1] db = db_arr
    cdef floating[::1] dh_next = dh_next_arr
    cdef floating[::1] dc_next = dc_next_arr
    cdef floating[::1] dz = dz_arr

    cdef Py_ssize_t t, d, j, k
    cdef floating iv, fv, gv, ov, tc, dht, dc, acc

    with nogil:
        for t in range(T - 1, -1, -1):
            for k in range(H):
                iv = gates[t, k]
                fv = gates[t, H + k]
                gv = gates[t, 2 * H + k]
                ov = gates[t, 3 * H + k]
                tc = tanh_c[t, k]
                dht = dh[t, k] + dh_next[k]
                dc = dht * ov * (1.0 - tc * tc) + dc_next[k]
                dz[k] = dc * gv * iv * (1.0 - iv)
                dz[H + k] = dc * c_prev[t, k] * fv * (1.0 - fv)
                dz[2 * H + k] = dc * iv * (1.0 - gv * gv)
                dz[3 * H + k] = dht * tc * ov * (1.0 - ov)
                dc_next[k] = dc * fv
            for d in range(D):
                acc = 0.0
                for j in range(G):
                    acc = acc + dz[j] * w_x[d, j]
                    dw_x[d, j] = dw_x[d, j] + x[t, d] * dz[j]
                dx[t, d] = acc
            for k in range(H):
                acc = 0.0
                for j in range(G):
                    acc = acc + dz[j] * w_h[k, j]
                    dw_h[k, j] = dw_h[k, j] + h_prev[t, k] * dz[j]
                dh_next[k] = acc
            for j in range(G):
                db[j] = db[j] + dz[j]

    return dx_arr, dw_x_arr, dw_h_arr, db_arr, dh_next_arr, dc_next_arr


def charcnn_forward(floating[:, ::1] chars, floating[:, :, ::1] filters):
    cdef Py_ssize_t C = chars.shape[0]
    cdef Py_ssize_t Dc = chars.shape[1]
    cdef Py_ssize_t W = filters.shape[0]
    cdef Py_ssize_t F = filters.shape[2]

    dtype = np.float32 if floating is float else np.float64
    if C < W:
        padded_arr = np.zeros((W, Dc), dtype=dtype)
        padded_arr[:C] = np.asarray(chars)
    else:
        padded_arr = np.asarray(chars)
    cdef floating[:, ::1] padded = padded_arr
    cdef Py_ssize_t P = padded.shape[0]
    cdef Py_ssize_t n_win = P - W + 1

    out_arr = np.empty(F, dtype=dtype)
    amax_arr = np.zeros(F, dtype=np.intp)
    cdef floating[::1] out = out_arr
    cdef Py_ssize_t[::1] amax = amax_arr

    cdef Py_ssize_t f, k, w, d
    cdef floating acc, best
    cdef Py_ssize_t best_k

    with nogil:
        for f in range(F):
            best = 0.0
            best_k = 0
            for k in range(n_win):
                acc = 0.0
                for w in range(W):
                    for d in range(Dc):
                        acc = acc + padded[k + w, d] * filters[w, d, f]
                if k == 0 or acc > best:
                    best = acc
                    best_k = k
            out[f] = best
            amax[f] = best_k

    cache = (padded_arr, np.asarray(filters), amax_arr, C)
    return out_arr, cache


def charcnn_backward(floating[::1] dout, cache):
    padded_arr, filters_arr, amax_arr, C = cache
    cdef floating[:, ::1] padded = padded_arr
    cdef floating[:, :, ::1] filters = filters_arr
    cdef Py_ssize_t[::1] amax = amax_arr
    cdef Py_ssize_t c_orig = C

    cdef Py_ssize_t W = filters.shape[0]
    cdef Py_ssize_t Dc = filters.shape[1]
    cdef Py_ssize_t F = filters.shape[2]

    dtype = np.float32 if floating is float else np.float64
    dpadded_arr = np.zeros((padded.shape[0], Dc), dtype=dtype)
    dfilters_arr = np.zeros((W, Dc, F), dtype=dtype)
    cdef floating[:, ::1] dpadded = dpadded_arr
    cdef floating[:, :, ::1] dfilters = dfilters_arr

    cdef Py_ssize_t f, k, w, d
    cdef floating gv

    with nogil:
        for f in range(F):
            k = amax[f]
            gv = dout[f]
            for w in range(W):
                for d in range(Dc):
                    dfilters[w, d, f] = dfilters[w, d, f] + gv * padded[k + w, d]
                    dpadded[k + w, d] = dpadded[k + w, d] + gv * filters[w, d, f]

    return dpadded_arr[:c_orig], dfilters_arr
