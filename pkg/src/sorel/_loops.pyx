# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled triple-loop kernels (reference path for the second-order scores)."""
import numpy as np

from libc.math cimport exp, log, INFINITY


def first_order_loop(const double[:, :, ::1] A, const Py_ssize_t[::1] head,
                     const Py_ssize_t[::1] tail):
    cdef Py_ssize_t R = A.shape[1]
    cdef Py_ssize_t r, a, c, i, j
    cdef double m, s, v
    out = np.empty(R)
    cdef double[::1] o = out
    with nogil:
        for r in range(R):
            m = -INFINITY
            for a in range(head.shape[0]):
                i = head[a]
                for c in range(tail.shape[0]):
                    v = A[i, r, tail[c]]
                    if v > m:
                        m = v
            s = 0.0
            for a in range(head.shape[0]):
                i = head[a]
                for c in range(tail.shape[0]):
                    s += exp(A[i, r, tail[c]] - m)
            o[r] = m + log(s)
    return out


def second_order_loop(const double[:, :, ::1] B, const Py_ssize_t[::1] head,
                      const Py_ssize_t[::1] tail, const Py_ssize_t[::1] ctx):
    cdef Py_ssize_t R = B.shape[1]
    cdef Py_ssize_t r, a, b, c, i, j, k
    cdef double m, s, v, bik
    out = np.empty(R)
    cdef double[::1] o = out
    with nogil:
        for r in range(R):
            m = -INFINITY
            for c in range(ctx.shape[0]):
                k = ctx[c]
                for a in range(head.shape[0]):
                    bik = B[head[a], r, k]
                    for b in range(tail.shape[0]):
                        v = bik + B[k, r, tail[b]]
                        if v > m:
                            m = v
            s = 0.0
            for c in range(ctx.shape[0]):
                k = ctx[c]
                for a in range(head.shape[0]):
                    bik = B[head[a], r, k]
                    for b in range(tail.shape[0]):
                        s += exp(bik + B[k, r, tail[b]] - m)
            o[r] = m + log(s)
    return out
