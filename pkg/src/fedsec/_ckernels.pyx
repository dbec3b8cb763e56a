# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled aggregation kernels.

Every reduction here sums strictly left to right so the results are
reproducible bit for bit against a plain sequential loop.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    return (x > y) - (x < y)


cdef void _sort(double* buf, Py_ssize_t m) noexcept nogil:
    # insertion sort wins for the handful of updates a round carries
    cdef Py_ssize_t i, k
    cdef double v
    if m > 32:
        qsort(buf, m, sizeof(double), _cmp_double)
        return
    for i in range(1, m):
        v = buf[i]
        k = i - 1
        while k >= 0 and buf[k] > v:
            buf[k + 1] = buf[k]
            k = k - 1
        buf[k + 1] = v


cdef void _sorted_column(const double[:, ::1] X, Py_ssize_t j, double* buf) noexcept nogil:
    cdef Py_ssize_t i, m = X.shape[0]
    for i in range(m):
        buf[i] = X[i, j]
    _sort(buf, m)


def coord_median(const double[:, ::1] X):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], j
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double* buf = <double*>malloc(m * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for j in range(n):
                _sorted_column(X, j, buf)
                if m % 2:
                    o[j] = buf[m // 2]
                else:
                    o[j] = (buf[m // 2 - 1] + buf[m // 2]) / 2.0
    finally:
        free(buf)
    return out


def trimmed_mean(const double[:, ::1] X, Py_ssize_t trim):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j
    cdef Py_ssize_t keep = m - 2 * trim
    cdef double acc
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double* buf = <double*>malloc(m * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for j in range(n):
                _sorted_column(X, j, buf)
                acc = 0.0
                for i in range(trim, m - trim):
                    acc = acc + buf[i]
                o[j] = acc / keep
    finally:
        free(buf)
    return out


def column_mean(const double[:, ::1] X):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j
    out = np.zeros(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                o[j] = o[j] + X[i, j]
        for j in range(n):
            o[j] = o[j] / m
    return out


cdef double _sq_dist(const double[:, ::1] X, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0, d
    for k in range(X.shape[1]):
        d = X[a, k] - X[b, k]
        acc = acc + d * d
    return acc


def pairwise_sq_dists(const double[:, ::1] X):
    cdef Py_ssize_t m = X.shape[0], a, b
    out = np.zeros((m, m))
    cdef double[:, ::1] D = out
    with nogil:
        for a in range(m):
            for b in range(a + 1, m):
                D[a, b] = _sq_dist(X, a, b)
                D[b, a] = D[a, b]
    return out


def krum_scores(const double[:, ::1] X, Py_ssize_t f):
    """Sum of the m - f - 2 smallest squared distances from each row to the others."""
    cdef Py_ssize_t m = X.shape[0], a, b, k, nearest = m - f - 2
    cdef double acc
    cdef double[:, ::1] D = pairwise_sq_dists(X)
    out = np.empty(m)
    cdef double[::1] o = out
    cdef double* buf = <double*>malloc(max(m, 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for a in range(m):
                k = 0
                for b in range(m):
                    if b != a:
                        buf[k] = D[a, b]
                        k = k + 1
                _sort(buf, k)
                acc = 0.0
                for b in range(nearest):
                    acc = acc + buf[b]
                o[a] = acc
    finally:
        free(buf)
    return out


def row_norms(const double[:, ::1] X):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j
    cdef double acc
    out = np.empty(m)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc = acc + X[i, j] * X[i, j]
            o[i] = sqrt(acc)
    return out


def clip_mean(const double[:, ::1] X, double cap):
    """Rescale rows with norm above ``cap`` down to ``cap``, then average."""
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j
    cdef double[::1] norms = row_norms(X)
    cdef double s
    out = np.zeros(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            if norms[i] > cap:
                s = cap / norms[i]
                for j in range(n):
                    o[j] = o[j] + X[i, j] * s
            else:
                for j in range(n):
                    o[j] = o[j] + X[i, j]
        for j in range(n):
            o[j] = o[j] / m
    return out


def sign_mean(const double[:, ::1] X, double step):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j
    cdef double v
    votes_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] votes = votes_arr
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                v = X[i, j]
                votes[j] = votes[j] + (v > 0) - (v < 0)
        for j in range(n):
            o[j] = step * (<double>votes[j] / m)
    return out


def weiszfeld(const double[:, ::1] X, double tol, Py_ssize_t max_iter, double eps):
    """Geometric median by Weiszfeld iteration started from the mean.

    Returns ``(point, iterations, converged, objectives)`` where
    ``objectives[k]`` is the summed distance at the k-th iterate.
    """
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], i, j, it = 0
    cdef double wsum, d, acc, step
    cdef bint converged = False
    z_arr = column_mean(X)
    cdef double[::1] z = z_arr
    new_arr = np.empty(n)
    cdef double[::1] znew = new_arr
    w_arr = np.empty(m)
    cdef double[::1] w = w_arr
    objectives = []
    with nogil:
        while it < max_iter:
            acc = 0.0
            for i in range(m):
                d = 0.0
                for j in range(n):
                    d = d + (z[j] - X[i, j]) * (z[j] - X[i, j])
                d = sqrt(d)
                acc = acc + d
                w[i] = 1.0 / (d if d > eps else eps)
            with gil:
                objectives.append(acc)
            wsum = 0.0
            for i in range(m):
                wsum = wsum + w[i]
            for j in range(n):
                znew[j] = 0.0
            for i in range(m):
                for j in range(n):
                    znew[j] = znew[j] + w[i] * X[i, j]
            step = 0.0
            for j in range(n):
                znew[j] = znew[j] / wsum
                step = step + (znew[j] - z[j]) * (znew[j] - z[j])
                z[j] = znew[j]
            it = it + 1
            if sqrt(step) < tol:
                converged = True
                break
        acc = 0.0
        for i in range(m):
            d = 0.0
            for j in range(n):
                d = d + (z[j] - X[i, j]) * (z[j] - X[i, j])
            acc = acc + sqrt(d)
    objectives.append(acc)
    return z_arr, it, converged, np.asarray(objectives)


def max_cosine(const double[::1] u, const double[:, ::1] H):
    """Largest cosine similarity between ``u`` and any row of ``H``; rows or
    ``u`` with zero norm contribute -inf."""
    cdef Py_ssize_t m = H.shape[0], n = H.shape[1], i, j
    cdef double nu = 0.0, nh, dot, best = -np.inf, c
    with nogil:
        for j in range(n):
            nu = nu + u[j] * u[j]
        nu = sqrt(nu)
        if nu > 0:
            for i in range(m):
                nh = 0.0
                dot = 0.0
                for j in range(n):
                    nh = nh + H[i, j] * H[i, j]
                    dot = dot + u[j] * H[i, j]
                nh = sqrt(nh)
                if nh > 0:
                    c = dot / (nu * nh)
                    if c > best:
                        best = c
    return best
