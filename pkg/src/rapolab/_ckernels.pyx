# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels for the policy forward/backward pass, sampling and
the pairwise rank reward. Mirrors ``_pykernels`` one-to-one."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh, erfc
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef double INV_SQRT2 = 0.70710678118654752440


cdef inline double _ndtr(double z) nogil:
    return 0.5 * erfc(-z * INV_SQRT2)


cdef inline void _gemm(char *ta, char *tb, int m, int n, int k,
                       double *a, int lda, double *b, int ldb, double *c, int ldc) noexcept nogil:
    """Row-major ``C[m, n] = op(A) @ op(B)`` through column-major BLAS (swap operands)."""
    cdef double one = 1.0, zero = 0.0
    dgemm(tb, ta, &n, &m, &k, &one, b, &ldb, a, &lda, &zero, c, &ldc)


def mlp_forward(const double[:, ::1] x, const double[:, ::1] w1, const double[::1] b1,
                const double[:, ::1] w2, const double[::1] b2):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], h = w1.shape[1], nb = w2.shape[1]
    cdef Py_ssize_t i, c, k
    cdef double mx, tot, lse
    hidden_arr = np.zeros((n, h), dtype=np.float64)
    logp_arr = np.zeros((n, nb), dtype=np.float64)
    if n == 0 or h == 0 or nb == 0:
        return hidden_arr, logp_arr
    cdef double[:, ::1] hidden = hidden_arr
    cdef double[:, ::1] logp = logp_arr
    with nogil:
        if d > 0:
            _gemm(b"N", b"N", <int>n, <int>h, <int>d, <double*>&x[0, 0], <int>d,
                  <double*>&w1[0, 0], <int>h, &hidden[0, 0], <int>h)
        for i in range(n):
            for c in range(h):
                hidden[i, c] = tanh(hidden[i, c] + b1[c])
        _gemm(b"N", b"N", <int>n, <int>nb, <int>h, &hidden[0, 0], <int>h,
              <double*>&w2[0, 0], <int>nb, &logp[0, 0], <int>nb)
        for i in range(n):
            mx = logp[i, 0] + b2[0]
            for k in range(nb):
                logp[i, k] = logp[i, k] + b2[k]
                if logp[i, k] > mx:
                    mx = logp[i, k]
            tot = 0.0
            for k in range(nb):
                logp[i, k] = logp[i, k] - mx
                tot = tot + exp(logp[i, k])
            lse = log(tot)
            for k in range(nb):
                logp[i, k] = logp[i, k] - lse
    return hidden_arr, logp_arr


def mlp_backward(const double[:, ::1] x, const double[:, ::1] hidden,
                 const double[:, ::1] w2, const double[:, ::1] g_logits):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], h = hidden.shape[1], nb = w2.shape[1]
    cdef Py_ssize_t i, c, k
    gw1_arr = np.zeros((d, h), dtype=np.float64)
    gb1_arr = np.zeros(h, dtype=np.float64)
    gw2_arr = np.zeros((h, nb), dtype=np.float64)
    gb2_arr = np.zeros(nb, dtype=np.float64)
    if n == 0 or h == 0 or nb == 0:
        return gw1_arr, gb1_arr, gw2_arr, gb2_arr
    gpre_arr = np.empty((n, h), dtype=np.float64)
    cdef double[:, ::1] gw1 = gw1_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[:, ::1] gw2 = gw2_arr
    cdef double[::1] gb2 = gb2_arr
    cdef double[:, ::1] gpre = gpre_arr
    with nogil:
        _gemm(b"T", b"N", <int>h, <int>nb, <int>n, <double*>&hidden[0, 0], <int>h,
              <double*>&g_logits[0, 0], <int>nb, &gw2[0, 0], <int>nb)
        _gemm(b"N", b"T", <int>n, <int>h, <int>nb, <double*>&g_logits[0, 0], <int>nb,
              <double*>&w2[0, 0], <int>nb, &gpre[0, 0], <int>h)
        for i in range(n):
            for k in range(nb):
                gb2[k] = gb2[k] + g_logits[i, k]
            for c in range(h):
                gpre[i, c] = gpre[i, c] * (1.0 - hidden[i, c] * hidden[i, c])
                gb1[c] = gb1[c] + gpre[i, c]
        if d > 0:
            _gemm(b"T", b"N", <int>d, <int>h, <int>n, <double*>&x[0, 0], <int>d,
                  &gpre[0, 0], <int>h, &gw1[0, 0], <int>h)
    return gw1_arr, gb1_arr, gw2_arr, gb2_arr


def sample_bins(const double[:, ::1] logp, const double[:, ::1] u):
    cdef Py_ssize_t n = logp.shape[0], nb = logp.shape[1], kk = u.shape[1]
    cdef Py_ssize_t i, j, k, lo, hi, mid
    cdef double target
    out_arr = np.empty((n, kk), dtype=np.int64)
    cdf_arr = np.empty(nb, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef double[::1] cdf = cdf_arr
    with nogil:
        for i in range(n):
            cdf[0] = exp(logp[i, 0])
            for k in range(1, nb):
                cdf[k] = cdf[k - 1] + exp(logp[i, k])
            for j in range(kk):
                target = u[i, j] * cdf[nb - 1]
                # first index with cdf > target
                lo = 0
                hi = nb
                while lo < hi:
                    mid = (lo + hi) // 2
                    if cdf[mid] <= target:
                        lo = mid + 1
                    else:
                        hi = mid
                if lo > nb - 1:
                    lo = nb - 1
                out[i, j] = lo
    return out_arr


def rank_reward_matrix(const double[:, ::1] scores, const double[::1] mu,
                       const double[::1] var, const double[::1] mos, double gamma):
    cdef Py_ssize_t n = scores.shape[0], kk = scores.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double p, pc, s, acc, o
    out_arr = np.empty((n, kk), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for k in range(kk):
                o = scores[i, k]
                acc = 0.0
                for j in range(n):
                    if j == i:
                        continue
                    s = sqrt(var[i] + var[j] + gamma)
                    p = _ndtr((o - mu[j]) / s)
                    pc = 1.0 if mos[i] >= mos[j] else 0.0
                    acc = acc + sqrt(pc * p) + sqrt((1.0 - pc) * (1.0 - p))
                out[i, k] = acc / (n - 1)
    return out_arr
