# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, fmin

cnp.import_array()


def sparsign_rows(const double[:, ::1] grads, const double[::1] budget,
                  const double[:, ::1] uniforms):
    """Row-wise sparsign: sign(g) where u < min(|g|*B, 1), else 0."""
    cdef Py_ssize_t n = grads.shape[0], d = grads.shape[1], i, j
    cdef double g, p
    out = np.empty((n, d), dtype=np.int8)
    cdef cnp.int8_t[:, ::1] o = out
    # branch-free body: the keep/sign outcomes are random, so branches mispredict
    for i in range(n):
        for j in range(d):
            g = grads[i, j]
            p = fmin(fabs(g) * budget[j], 1.0)
            o[i, j] = <cnp.int8_t>((uniforms[i, j] < p) * ((g > 0) - (g < 0)))
    return out


def vote_sum(const cnp.int8_t[:, ::1] votes):
    """Column sums of a stack of ternary vectors."""
    cdef Py_ssize_t n = votes.shape[0], d = votes.shape[1], i, j
    out = np.zeros(d, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    for i in range(n):
        for j in range(d):
            o[j] += votes[i, j]
    return out


def wrong_prob_enumerate(const double[::1] p, const double[::1] q):
    """Sum of product probabilities over all 3^M outcomes with vote sum <= 0.

    Worker m votes +1 w.p. q[m], -1 w.p. p[m], 0 otherwise.
    """
    cdef Py_ssize_t M = p.shape[0], m
    if M == 0:
        return 1.0
    if M > 24:
        raise ValueError("enumeration limited to 24 workers")
    cdef double[25] prod
    cdef int[25] acc
    cdef int[24] choice
    cdef double total = 0.0, w
    cdef int c
    prod[0] = 1.0
    acc[0] = 0
    m = 0
    choice[0] = -1
    # iterative depth-first walk over the outcome tree
    while m >= 0:
        choice[m] += 1
        c = choice[m]
        if c > 2:
            m -= 1
            continue
        if c == 0:
            w = q[m]
            acc[m + 1] = acc[m] + 1
        elif c == 1:
            w = p[m]
            acc[m + 1] = acc[m] - 1
        else:
            w = 1.0 - p[m] - q[m]
            acc[m + 1] = acc[m]
        prod[m + 1] = prod[m] * w
        if m + 1 == M:
            if acc[M] <= 0:
                total += prod[M]
        else:
            m += 1
            choice[m] = -1
    return total
