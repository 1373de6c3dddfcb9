"""Brute-force references, written independently of the package code paths."""
import itertools
import math

import numpy as np


def lse(values):
    values = list(values)
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


def triple_loop_bilinear(e_head, e_tail, T):
    N, d = e_head.shape
    M = e_tail.shape[0]
    R = T.shape[1]
    out = np.zeros((N, R, M))
    for i, r, j in itertools.product(range(N), range(R), range(M)):
        out[i, r, j] = sum(e_head[i, p] * T[p, r, q] * e_tail[j, q]
                           for p in range(d) for q in range(T.shape[2]))
    return out


def first_order(A, head, tail):
    return np.array([lse(A[i, r, j] for i in head for j in tail) for r in range(A.shape[1])])


def second_order(B, head, tail, ctx):
    return np.array([lse(B[i, r, k] + B[k, r, j] for k in ctx for i in head for j in tail)
                     for r in range(B.shape[1])])


def matmul(x, W):
    out = np.zeros(x.shape[:-1] + (W.shape[1],))
    for idx in np.ndindex(*x.shape[:-1]):
        for c in range(W.shape[1]):
            out[idx + (c,)] = sum(x[idx + (a,)] * W[a, c] for a in range(W.shape[0]))
    return out
