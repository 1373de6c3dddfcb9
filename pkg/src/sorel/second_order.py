"""Second-order relation scores routed through a context token.

For a head/tail pair and relation r the score is

    log sum_{k in ctx, i in head, j in tail} exp(B[i, r, k] + B[k, r, j])

Three evaluation paths are provided:

* :func:`second_order_naive` walks the triple sum directly (loop kernel).
* :func:`second_order_dense` materializes every C(i, j | k); O(N^3) memory.
* :func:`second_order_fused` masks exp(B) into a head x context factor and a
  context x tail factor, then contracts the context axis with one batched
  matmul of shape [P*R, N, N]; O(P*R*N^2) memory.
"""
import numpy as np

from sorel import kernels, layers
from sorel.errors import InputError
from sorel.first_order import biaffine, biaffine_backward, biaffine_forward
from sorel.pairs import MentionSets, PairIndex

NO_CONTEXT = -1e30

intermediate_scores_forward = biaffine_forward
intermediate_scores_backward = biaffine_backward


def intermediate_scores(e2_head, e2_tail, M):
    """B[b, i, r, j] = (e2_head_i M) e2_tail_j; same contract as the bi-affine map."""
    return biaffine(e2_head, e2_tail, M)


def _check_context(pair, ctx, n_tokens):
    if not isinstance(pair, MentionSets):
        pair = MentionSets(*pair)
    pair.validate(n_tokens)
    ctx = tuple(int(k) for k in ctx)
    if set(ctx) & (set(pair.head) | set(pair.tail)):
        raise InputError("context set overlaps a mention set")
    if ctx and (min(ctx) < 0 or max(ctx) >= n_tokens):
        raise InputError("context index out of range")
    return pair, ctx


def second_order_naive(B, pair, ctx, impl=None):
    """Triple-loop reference for one document's B [N, R, N]; returns [R]."""
    pair, ctx = _check_context(pair, ctx, B.shape[0])
    if not ctx:
        return np.full(B.shape[1], NO_CONTEXT)
    return kernels.second_order_loop(B, pair.head, pair.tail, ctx, impl=impl)


def _gather(B, index):
    # Bp[p, r, x, y] = B[doc[p], x, r, y]
    return B[index.doc].transpose(0, 2, 1, 3)


def second_order_dense(B, index, stats=None):
    """Scores [P, R] by explicitly building C[p, r, i, k, j] = B[i,r,k] + B[k,r,j]."""
    Bp = _gather(B, index)
    C = Bp[:, :, :, :, None] + Bp[:, :, None, :, :]
    mask = (index.head[:, :, None, None] & index.ctx[:, None, :, None]
            & index.tail[:, None, None, :])[:, None]
    scores, _ = layers.masked_lse(C, mask, axes=(2, 3, 4))
    if stats is not None:
        stats["c_tensor_bytes"] = C.nbytes
    return np.where(np.isfinite(scores), scores, NO_CONTEXT)


def _masked_shift(x, mask):
    m = np.where(mask, x, -np.inf).max(axis=(2, 3))
    return np.where(np.isfinite(m), m, 0.0)


def second_order_fused(B, index):
    """Efficient second-order scores for all pairs in ``index``.

    B: [b, N, R, N]. Returns ``(scores [P, R], cache)``; pairs with an empty
    context get ``NO_CONTEXT``.
    """
    P = len(index)
    N = B.shape[1]
    R = B.shape[2]
    Bp = _gather(B, index)
    m1 = (index.head[:, :, None] & index.ctx[:, None, :])[:, None]
    m2 = (index.ctx[:, :, None] & index.tail[:, None, :])[:, None]
    s1 = _masked_shift(Bp, m1)
    s2 = _masked_shift(Bp, m2)
    T1 = np.exp(np.where(m1, Bp - s1[..., None, None], -np.inf))
    T2 = np.exp(np.where(m2, Bp - s2[..., None, None], -np.inf))
    prod = np.matmul(T1.reshape(P * R, N, N), T2.reshape(P * R, N, N))
    Z = prod.sum(axis=(1, 2)).reshape(P, R)
    empty = Z <= 0
    with np.errstate(divide="ignore"):
        scores = np.where(empty, NO_CONTEXT, np.log(np.where(empty, 1.0, Z)) + s1 + s2)
    return scores.astype(B.dtype, copy=False), (index, T1, T2, Z, empty, B.shape)


def second_order_fused_backward(dscores, cache):
    """Gradient w.r.t. B: softmax mass scattered into head-row and tail-column slices."""
    index, T1, T2, Z, empty, shape = cache
    g = np.where(empty, 0.0, dscores / np.where(empty, 1.0, Z))[..., None, None]
    # d Z / d T1[i, k] = sum_j T2[k, j];  d Z / d T2[k, j] = sum_i T1[i, k]
    G = T1 * T2.sum(axis=3)[:, :, None, :] + T2 * T1.sum(axis=2)[:, :, :, None]
    dBp = (g * G).transpose(0, 2, 1, 3)
    dB = np.zeros(shape, dtype=dBp.dtype)
    np.add.at(dB, index.doc, dBp)
    return dB


def second_order_efficient(B, pairs):
    """Per-document API: B [N, R, N] and a list of ``(MentionSets, context)``.

    Returns [num_pairs, R].
    """
    N = B.shape[0]
    if not len(pairs):
        return np.zeros((0, B.shape[1]), dtype=B.dtype)
    index = PairIndex.from_sets([(p if isinstance(p, MentionSets) else MentionSets(*p), c)
                                 for p, c in pairs], N)
    return second_order_fused(B[None], index)[0]


def combine(scores1, scores2, alpha):
    """scores1 + alpha * scores2; alpha == 0 returns an exact copy of scores1."""
    scores1 = np.asarray(scores1)
    if alpha == 0:
        return scores1.copy()
    return scores1 + alpha * np.asarray(scores2)
