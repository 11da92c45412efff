# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ensemble kernels; same contract as ``_pykernels``."""
import numpy as np
from libc.math cimport sqrt

cdef double ZERO_NORM = 1e-12


cdef double _cos(const double[::1] u, const double[::1] v) noexcept nogil:
    cdef Py_ssize_t i, n = u.shape[0]
    cdef double uu = 0.0, vv = 0.0, uv = 0.0, s
    for i in range(n):
        uu += u[i] * u[i]
        vv += v[i] * v[i]
        uv += u[i] * v[i]
    uu = sqrt(uu)
    vv = sqrt(vv)
    if uu < ZERO_NORM or vv < ZERO_NORM:
        if uu < ZERO_NORM and vv < ZERO_NORM:
            return 1.0
        return 0.0
    s = uv / (uu * vv)
    if s > 1.0:
        return 1.0
    if s < -1.0:
        return -1.0
    return s


def cosine_similarity(const double[::1] u, const double[::1] v):
    return _cos(u, v)


def similarities_to_last(const double[:, ::1] cands):
    cdef Py_ssize_t k, m = cands.shape[0]
    sims = np.empty(m)
    cdef double[::1] s = sims
    for k in range(m - 1):
        s[k] = _cos(cands[k], cands[m - 1])
    s[m - 1] = 1.0
    return sims


def centered_mean(const double[:, ::1] cands, const unsigned char[::1] mask):
    cdef Py_ssize_t k, i, m = cands.shape[0], a = cands.shape[1]
    cdef Py_ssize_t count = 0
    out = np.zeros(a)
    cdef double[::1] o = out
    for k in range(m):
        if mask[k]:
            count += 1
            for i in range(a):
                o[i] += cands[k, i] - cands[m - 1, i]
    for i in range(a):
        o[i] = cands[m - 1, i] + o[i] / count
    return out


def centered_weighted_mean(const double[:, ::1] cands, const double[::1] weights):
    cdef Py_ssize_t k, i, m = cands.shape[0], a = cands.shape[1]
    out = np.zeros(a)
    cdef double[::1] o = out
    for k in range(m):
        for i in range(a):
            o[i] += weights[k] * (cands[k, i] - cands[m - 1, i])
    for i in range(a):
        o[i] += cands[m - 1, i]
    return out


def vote(const double[:, ::1] cands, double tau, bint tie_high):
    cdef Py_ssize_t k, m = cands.shape[0]
    cdef Py_ssize_t n_high = 0
    sims = similarities_to_last(cands)
    cdef double[::1] s = sims
    high = np.empty(m, dtype=np.uint8)
    cdef unsigned char[::1] h = high
    for k in range(m):
        h[k] = 1 if s[k] > tau else 0
        n_high += h[k]
    if n_high > m - n_high or (tie_high and 2 * n_high == m):
        chosen = centered_mean(cands, high)
    else:
        chosen = centered_mean(cands, 1 - high)
    return sims, high, chosen
