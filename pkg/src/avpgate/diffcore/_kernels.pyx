# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM recurrence and CRC-64; same API as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double tanh(double x) nogil:
    cdef double e
    if x >= 0:
        e = exp(-2.0 * x)
        return (1.0 - e) / (1.0 + e)
    e = exp(2.0 * x)
    return (e - 1.0) / (e + 1.0)


cdef extern from "_lstm_math.h" nogil:
    void _sig_block "avp_sig_block"(double* x, int n)
    void _tanh_block "avp_tanh_block"(double* x, double* out, int n)
    void _tanh_inplace "avp_tanh_inplace"(double* x, int n)


cdef void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                double* a, int lda, double* b, int ldb, double beta,
                double* c, int ldc) nogil:
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def lstm_forward(gx, U, mask):
    # always a fresh buffer: with B == 1 the transpose is already contiguous
    # and ascontiguousarray would hand back a view of the caller's array
    cdef cnp.ndarray[double, ndim=3, mode="c"] acts = np.array(
        np.transpose(gx, (1, 0, 2)), dtype=np.float64, order="C", copy=True)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Uc = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] mt = np.ascontiguousarray(
        np.transpose(mask), dtype=np.float64)
    cdef int L = acts.shape[0], B = acts.shape[1], H4 = acts.shape[2]
    cdef int H = H4 // 4
    cdef cnp.ndarray[double, ndim=3, mode="c"] hs = np.zeros((L, B, H))
    cdef cnp.ndarray[double, ndim=3, mode="c"] cs = np.zeros((L, B, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] h = np.zeros((B, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] c = np.zeros((B, H))
    cdef cnp.ndarray[double, ndim=1, mode="c"] th = np.zeros(H)
    cdef double[:, :, ::1] hv = hs, cv = cs, av = acts
    cdef double[:, ::1] hcur = h, ccur = c, mv = mt, uv = Uc
    cdef double* a
    cdef double* cc
    cdef double* hh
    cdef double* tv = &th[0] if H > 0 else NULL
    cdef int t, b, j
    with nogil:
        for t in range(L):
            if t > 0:
                _gemm(b'N', b'N', H4, B, H, 1.0, &uv[0, 0], H4, &hcur[0, 0], H, 1.0, &av[t, 0, 0], H4)
            for b in range(B):
                a = &av[t, b, 0]
                _sig_block(a, 2 * H)
                _tanh_inplace(a + 2 * H, H)
                _sig_block(a + 3 * H, H)
                if mv[t, b] > 0:
                    cc = &ccur[b, 0]
                    hh = &hcur[b, 0]
                    for j in range(H):
                        cc[j] = a[j] * cc[j] + a[H + j] * a[2 * H + j]
                    _tanh_block(cc, tv, H)
                    for j in range(H):
                        hh[j] = a[3 * H + j] * tv[j]
                for j in range(H):
                    hv[t, b, j] = hcur[b, j]
                    cv[t, b, j] = ccur[b, j]
    return (np.ascontiguousarray(hs.transpose(1, 0, 2)),
            np.ascontiguousarray(cs.transpose(1, 0, 2)),
            np.ascontiguousarray(acts.transpose(1, 0, 2)))


def lstm_backward(dhs, U, mask, hs, cs, acts):
    cdef cnp.ndarray[double, ndim=3, mode="c"] dht = np.ascontiguousarray(
        np.transpose(dhs, (1, 0, 2)), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] hst = np.ascontiguousarray(
        np.transpose(hs, (1, 0, 2)), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] cst = np.ascontiguousarray(
        np.transpose(cs, (1, 0, 2)), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] act = np.ascontiguousarray(
        np.transpose(acts, (1, 0, 2)), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Uc = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] mt = np.ascontiguousarray(
        np.transpose(mask), dtype=np.float64)
    cdef int L = hst.shape[0], B = hst.shape[1], H = hst.shape[2]
    cdef int H4 = 4 * H
    cdef cnp.ndarray[double, ndim=3, mode="c"] dgx = np.zeros((L, B, H4))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dU = np.zeros((H, H4))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dhn = np.zeros((B, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dcn = np.zeros((B, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] rec = np.zeros((B, H))
    cdef double[:, :, ::1] dhv = dht, hv = hst, cv = cst, av = act, dz = dgx
    cdef double[:, ::1] dhnv = dhn, dcnv = dcn, recv = rec, mv = mt, uv = Uc, duv = dU
    cdef int t, b, j
    cdef double f, i, g, o, tc, dh, dc, dct, cp, m
    with nogil:
        for t in range(L - 1, -1, -1):
            for b in range(B):
                m = mv[t, b]
                for j in range(H):
                    dh = dhv[t, b, j] + dhnv[b, j]
                    dc = dcnv[b, j]
                    if m > 0:
                        f = av[t, b, j]
                        i = av[t, b, H + j]
                        g = av[t, b, 2 * H + j]
                        o = av[t, b, 3 * H + j]
                        cp = cv[t - 1, b, j] if t > 0 else 0.0
                        tc = tanh(cv[t, b, j])
                        dct = dc + dh * o * (1.0 - tc * tc)
                        dz[t, b, j] = dct * cp * f * (1.0 - f)
                        dz[t, b, H + j] = dct * g * i * (1.0 - i)
                        dz[t, b, 2 * H + j] = dct * i * (1.0 - g * g)
                        dz[t, b, 3 * H + j] = dh * tc * o * (1.0 - o)
                        dcnv[b, j] = dct * f
                        dhnv[b, j] = 0.0
                    else:
                        dhnv[b, j] = dh
                        dcnv[b, j] = dc
            # recurrent contributions: dh_prev += dz @ U^T, dU += h_prev^T @ dz
            _gemm(b'T', b'N', H, B, H4, 1.0, &uv[0, 0], H4, &dz[t, 0, 0], H4, 0.0, &recv[0, 0], H)
            for b in range(B):
                for j in range(H):
                    dhnv[b, j] += recv[b, j]
            if t > 0:
                _gemm(b'N', b'T', H4, H, B, 1.0, &dz[t, 0, 0], H4, &hv[t - 1, 0, 0], H, 1.0, &duv[0, 0], H4)
    return np.ascontiguousarray(dgx.transpose(1, 0, 2)), dU


cdef unsigned long long _TABLE[256]


cdef void _init_table():
    cdef unsigned long long poly = 0xC96C5795D7870F42ULL, c
    cdef int n, k
    for n in range(256):
        c = n
        for k in range(8):
            if c & 1:
                c = (c >> 1) ^ poly
            else:
                c = c >> 1
        _TABLE[n] = c


_init_table()


def crc64(data, unsigned long long crc=0):
    cdef const unsigned char[::1] buf = memoryview(bytes(data))
    cdef unsigned long long c = crc ^ 0xFFFFFFFFFFFFFFFFULL
    cdef Py_ssize_t k, n = buf.shape[0]
    with nogil:
        for k in range(n):
            c = _TABLE[(c ^ buf[k]) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFFFFFFFFFFULL
