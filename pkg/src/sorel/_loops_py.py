"""Pure-Python reference loops.

Same signatures as the compiled ``_loops`` extension. Used when the
extension is unavailable or ``SOREL_PURE_PYTHON`` is set.
"""
import math

import numpy as np


def first_order_loop(A, head, tail):
    N, R, _ = A.shape
    out = np.empty(R)
    for r in range(R):
        m = -math.inf
        for i in head:
            for j in tail:
                v = A[i, r, j]
                if v > m:
                    m = v
        s = 0.0
        for i in head:
            for j in tail:
                s += math.exp(A[i, r, j] - m)
        out[r] = m + math.log(s)
    return out


def second_order_loop(B, head, tail, ctx):
    N, R, _ = B.shape
    out = np.empty(R)
    for r in range(R):
        m = -math.inf
        for k in ctx:
            for i in head:
                bik = B[i, r, k]
                for j in tail:
                    v = bik + B[k, r, j]
                    if v > m:
                        m = v
        s = 0.0
        for k in ctx:
            for i in head:
                bik = B[i, r, k]
                for j in tail:
                    s += math.exp(bik + B[k, r, j] - m)
        out[r] = m + math.log(s)
    return out
