# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence (forward and backpropagation through time).

Per time step the recurrent product is one BLAS gemm; gate nonlinearities and
state updates are fused loops over contiguous rows so the compiler can use
vector math. Arrays are C-contiguous, so the row-major product ``A @ W`` is
issued as the column-major ``W^T @ A^T``.

Sigmoid is evaluated as ``0.5 + 0.5 * tanh(x / 2)``, which stays finite for
any input.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, tanhf
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport sgemm, dgemm

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _sigmoid_row(real *x, int n) noexcept nogil:
    cdef int j
    if real is float:
        for j in range(n):
            x[j] = 0.5 + 0.5 * tanhf(0.5 * x[j])
    else:
        for j in range(n):
            x[j] = 0.5 + 0.5 * tanh(0.5 * x[j])


cdef inline void _tanh_row(real *x, real *out, int n) noexcept nogil:
    cdef int j
    if real is float:
        for j in range(n):
            out[j] = tanhf(x[j])
    else:
        for j in range(n):
            out[j] = tanh(x[j])


cdef inline void _gemm(char *ta, char *tb, int m, int n, int k, real *a, int lda,
                       real *b, int ldb, real beta, real *c, int ldc) noexcept nogil:
    cdef real alpha = 1.0
    if real is float:
        sgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        dgemm(ta, tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def _forward(real[:, :, ::1] xproj, real[:, ::1] whh, real[:, :, ::1] hs,
             real[:, :, ::1] cs, real[:, :, ::1] acts, real[::1] scratch):
    cdef int t_len = xproj.shape[0], batch = xproj.shape[1], four_h = xproj.shape[2]
    cdef int hid = four_h // 4
    cdef int t, b, j
    cdef real *a
    cdef real *c
    cdef real *cp
    cdef real *h
    cdef real *tc = &scratch[0]
    with nogil:
        for t in range(t_len):
            memcpy(&acts[t, 0, 0], &xproj[t, 0, 0], batch * four_h * sizeof(real))
            if t > 0:
                # acts[t] += hs[t-1] @ whh
                _gemm(b"N", b"N", four_h, batch, hid, &whh[0, 0], four_h,
                      &hs[t - 1, 0, 0], hid, <real>1.0, &acts[t, 0, 0], four_h)
            for b in range(batch):
                a = &acts[t, b, 0]
                _sigmoid_row(a, 2 * hid)
                _tanh_row(a + 2 * hid, a + 2 * hid, hid)
                _sigmoid_row(a + 3 * hid, hid)
                c = &cs[t, b, 0]
                h = &hs[t, b, 0]
                if t > 0:
                    cp = &cs[t - 1, b, 0]
                    for j in range(hid):
                        c[j] = a[hid + j] * cp[j] + a[j] * a[2 * hid + j]
                else:
                    for j in range(hid):
                        c[j] = a[j] * a[2 * hid + j]
                _tanh_row(c, tc, hid)
                for j in range(hid):
                    h[j] = a[3 * hid + j] * tc[j]


def _backward(real[:, :, ::1] dh_seq, real[:, :, ::1] cs, real[:, :, ::1] acts,
              real[:, ::1] whh, real[:, :, ::1] dgates, real[:, ::1] dh_next,
              real[:, ::1] dc_next, real[::1] scratch):
    cdef int t_len = dh_seq.shape[0], batch = dh_seq.shape[1], hid = dh_seq.shape[2]
    cdef int four_h = 4 * hid
    cdef int t, b, j
    cdef real dh, dc, cprev
    cdef real *a
    cdef real *d
    cdef real *tc = &scratch[0]
    with nogil:
        for t in range(t_len - 1, -1, -1):
            for b in range(batch):
                a = &acts[t, b, 0]
                d = &dgates[t, b, 0]
                _tanh_row(&cs[t, b, 0], tc, hid)
                for j in range(hid):
                    cprev = cs[t - 1, b, j] if t > 0 else 0.0
                    dh = dh_seq[t, b, j] + dh_next[b, j]
                    dc = dc_next[b, j] + dh * a[3 * hid + j] * (1.0 - tc[j] * tc[j])
                    d[j] = dc * a[2 * hid + j] * a[j] * (1.0 - a[j])
                    d[hid + j] = dc * cprev * a[hid + j] * (1.0 - a[hid + j])
                    d[2 * hid + j] = dc * a[j] * (1.0 - a[2 * hid + j] * a[2 * hid + j])
                    d[3 * hid + j] = dh * tc[j] * a[3 * hid + j] * (1.0 - a[3 * hid + j])
                    dc_next[b, j] = dc * a[hid + j]
            # dh_next = dgates[t] @ whh^T
            _gemm(b"T", b"N", hid, batch, four_h, &whh[0, 0], four_h,
                  &dgates[t, 0, 0], four_h, <real>0.0, &dh_next[0, 0], hid)


def lstm_forward(xproj, whh):
    t_len, batch, four_h = xproj.shape
    hid = four_h // 4
    dtype = xproj.dtype
    hs = np.empty((t_len, batch, hid), dtype=dtype)
    cs = np.empty((t_len, batch, hid), dtype=dtype)
    acts = np.empty_like(xproj)
    if t_len and batch:
        _forward(xproj, whh, hs, cs, acts, np.empty(hid, dtype=dtype))
    return hs, cs, acts


def lstm_backward(dh_seq, cs, acts, whh):
    t_len, batch, hid = dh_seq.shape
    dtype = dh_seq.dtype
    dgates = np.empty((t_len, batch, 4 * hid), dtype=dtype)
    dh_next = np.zeros((batch, hid), dtype=dtype)
    dc_next = np.zeros((batch, hid), dtype=dtype)
    if t_len and batch:
        _backward(dh_seq, cs, acts, whh, dgates, dh_next, dc_next, np.empty(hid, dtype=dtype))
    return dgates
