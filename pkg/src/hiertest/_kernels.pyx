# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Lasso coordinate descent, complete linkage, incomplete beta.

Every function here has a pure-Python twin in ``_pykernels`` with the same
signature and semantics; ``_backend`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, exp, log, log1p, lgamma, INFINITY

cnp.import_array()


cdef inline double _soft(double z, double lam) noexcept nogil:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


cdef double _sweep(const double[::1, :] X, double[::1] beta, double[::1] resid,
                   const double[::1] col_sq, double lam, const Py_ssize_t[::1] idx,
                   Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double a, z, new, delta, dmax = 0.0, inv_n = 1.0 / n
    for t in range(m):
        j = idx[t]
        if col_sq[j] == 0.0:
            continue
        a = col_sq[j] * inv_n
        z = 0.0
        for i in range(n):
            z += X[i, j] * resid[i]
        z = z * inv_n + a * beta[j]
        new = _soft(z, lam) / a
        delta = new - beta[j]
        if delta != 0.0:
            for i in range(n):
                resid[i] -= delta * X[i, j]
            beta[j] = new
            delta = fabs(delta) * sqrt(a)
            if delta > dmax:
                dmax = delta
    return dmax


cdef Py_ssize_t _cd(const double[::1, :] X, double[::1] beta, double[::1] resid,
                    const double[::1] col_sq, double lam, Py_ssize_t max_iter,
                    double tol, Py_ssize_t[::1] all_idx, Py_ssize_t[::1] act_idx,
                    int* converged) noexcept nogil:
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t n_iter = 0, m, j
    cdef double dmax
    converged[0] = 0
    while n_iter < max_iter:
        dmax = _sweep(X, beta, resid, col_sq, lam, all_idx, p)
        n_iter += 1
        if dmax < tol:
            converged[0] = 1
            break
        m = 0
        for j in range(p):
            if beta[j] != 0.0:
                act_idx[m] = j
                m += 1
        while n_iter < max_iter:
            dmax = _sweep(X, beta, resid, col_sq, lam, act_idx, m)
            n_iter += 1
            if dmax < tol:
                break
    return n_iter


def lasso_cd(const double[::1, :] X, const double[::1] y, double lam,
             double[::1] beta, const double[::1] col_sq, Py_ssize_t max_iter,
             double tol):
    """Cyclic coordinate descent in place on ``beta``; returns (n_iter, converged)."""
    cdef Py_ssize_t p = X.shape[1]
    cdef int conv = 0
    cdef Py_ssize_t n_iter
    resid_arr = np.asarray(y) - np.asarray(X) @ np.asarray(beta)
    cdef double[::1] resid = resid_arr
    cdef Py_ssize_t[::1] all_idx = np.arange(p, dtype=np.intp)
    cdef Py_ssize_t[::1] act_idx = np.empty(p, dtype=np.intp)
    with nogil:
        n_iter = _cd(X, beta, resid, col_sq, lam, max_iter, tol, all_idx, act_idx, &conv)
    return int(n_iter), bool(conv)


def lasso_path(const double[::1, :] X, const double[::1] y, const double[::1] lambdas,
               const double[::1] col_sq, Py_ssize_t max_iter, double tol):
    """Warm-started fits along ``lambdas``; returns (coefs[n_lambda, p], converged[n_lambda])."""
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t L = lambdas.shape[0]
    cdef Py_ssize_t k, j, i
    cdef int conv = 0
    coefs_arr = np.zeros((L, p), dtype=np.float64)
    conv_arr = np.zeros(L, dtype=np.uint8)
    cdef double[:, ::1] coefs = coefs_arr
    cdef unsigned char[::1] convs = conv_arr
    cdef double[::1] beta = np.zeros(p, dtype=np.float64)
    cdef double[::1] resid = np.array(y, dtype=np.float64)
    cdef Py_ssize_t[::1] all_idx = np.arange(p, dtype=np.intp)
    cdef Py_ssize_t[::1] act_idx = np.empty(p, dtype=np.intp)
    with nogil:
        for k in range(L):
            _cd(X, beta, resid, col_sq, lambdas[k], max_iter, tol, all_idx, act_idx, &conv)
            convs[k] = conv
            for j in range(p):
                coefs[k, j] = beta[j]
    return coefs_arr, conv_arr.astype(bool)


def complete_linkage(double[:, ::1] D):
    """Agglomerate with complete linkage, overwriting ``D``.

    Clusters live in the slot of their smallest variable index, so scanning
    slot pairs (i < j) in row-major order and taking the first strict minimum
    breaks distance ties by the lowest (smallest, second-smallest) pair.
    Returns (pairs[p-1, 2] of slots, heights[p-1]).
    """
    cdef Py_ssize_t p = D.shape[0]
    cdef Py_ssize_t step, i, j, k, bi = 0, bj = 0
    cdef double best, d
    pairs_arr = np.zeros((max(p - 1, 0), 2), dtype=np.intp)
    heights_arr = np.zeros(max(p - 1, 0), dtype=np.float64)
    cdef Py_ssize_t[:, ::1] pairs = pairs_arr
    cdef double[::1] heights = heights_arr
    cdef unsigned char[::1] alive = np.ones(p, dtype=np.uint8)
    with nogil:
        for step in range(p - 1):
            best = INFINITY
            for i in range(p):
                if not alive[i]:
                    continue
                for j in range(i + 1, p):
                    if alive[j] and D[i, j] < best:
                        best = D[i, j]
                        bi = i
                        bj = j
            pairs[step, 0] = bi
            pairs[step, 1] = bj
            heights[step] = best
            alive[bj] = 0
            for k in range(p):
                if alive[k] and k != bi:
                    d = D[bi, k] if D[bi, k] > D[bj, k] else D[bj, k]
                    D[bi, k] = d
                    D[k, bi] = d
    return pairs_arr, heights_arr


cdef double _betacf(double a, double b, double x) noexcept nogil:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    cdef double tiny = 1e-300, qab = a + b, qap = a + 1.0, qam = a - 1.0
    cdef double c = 1.0, d = 1.0 - qab * x / qap, h, aa, delta
    cdef int m, m2
    if fabs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 301):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if fabs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if fabs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < 1e-12:
            break
    return h


cpdef double betainc(double a, double b, double x) noexcept nogil:
    """Regularized incomplete beta I_x(a, b) for a, b > 0."""
    cdef double front
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = exp(lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b
