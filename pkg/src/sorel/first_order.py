"""First-order relation scores: head/tail MLP projections, the bi-affine
all-pairs tensor, and LogSumExp pooling over mention pairs."""
import numpy as np

from sorel import kernels, layers
from sorel.errors import InputError
from sorel.pairs import MentionSets, PairIndex


def init_projector(prefix, model_dim, hidden_dim, proj_dim, init):
    p = {}
    for role in ("head", "tail"):
        p[f"{prefix}.{role}.W1"] = init(f"{prefix}.{role}.W1", (model_dim, hidden_dim), "matrix")
        p[f"{prefix}.{role}.W2"] = init(f"{prefix}.{role}.W2", (hidden_dim, proj_dim), "matrix")
    return p


def project_forward(reps, W1, W2, dropout_p=0.0, rng=None, train=False):
    """``W2 · ReLU(W1 · b_i)`` per token, then dropout in train mode."""
    if reps.shape[-1] != W1.shape[0] or W1.shape[1] != W2.shape[0]:
        raise InputError(f"projector shapes {W1.shape}, {W2.shape} do not compose with input {reps.shape}")
    h, c1 = layers.linear_forward(reps, W1)
    a, cr = layers.relu_forward(h)
    e, c2 = layers.linear_forward(a, W2)
    e, cd = layers.dropout_forward(e, dropout_p, rng, train)
    return e, (c1, cr, c2, cd)


def project_backward(de, cache):
    c1, cr, c2, cd = cache
    de = layers.dropout_backward(de, cd)
    da, dW2, _ = layers.linear_backward(de, c2)
    dh = layers.relu_backward(da, cr)
    dx, dW1, _ = layers.linear_backward(dh, c1)
    return dx, dW1, dW2


def project(reps, params, prefix, role, mode="eval", dropout_p=0.0, rng=None):
    W1, W2 = params[f"{prefix}.{role}.W1"], params[f"{prefix}.{role}.W2"]
    return project_forward(reps, W1, W2, dropout_p, rng, mode == "train")[0]


def biaffine_forward(e_head, e_tail, L):
    """A[b, i, r, j] = sum_pq e_head[b, i, p] L[p, r, q] e_tail[b, j, q]."""
    if e_head.shape[-1] != L.shape[0] or e_tail.shape[-1] != L.shape[2]:
        raise InputError(f"tensor {L.shape} does not match projections {e_head.shape}, {e_tail.shape}")
    b, N, d = e_head.shape
    R = L.shape[1]
    X = (e_head @ L.reshape(d, -1)).reshape(b, N * R, L.shape[2])
    A = (X @ e_tail.transpose(0, 2, 1)).reshape(b, N, R, e_tail.shape[1])
    return A, (e_head, e_tail, L, X)


def biaffine_backward(dA, cache):
    e_head, e_tail, L, X = cache
    b, N, R, M = dA.shape
    d = L.shape[0]
    dA2 = dA.reshape(b, N * R, M)
    dX = dA2 @ e_tail
    de_tail = dA2.transpose(0, 2, 1) @ X
    dXf = dX.reshape(b, N, -1)
    dL = np.einsum("bip,biq->pq", e_head, dXf).reshape(L.shape)
    de_head = dXf @ L.reshape(d, -1).T
    return de_head, de_tail, dL


def biaffine(e_head, e_tail, L):
    squeeze = e_head.ndim == 2
    if squeeze:
        e_head, e_tail = e_head[None], e_tail[None]
    A = biaffine_forward(e_head, e_tail, L)[0]
    return A[0] if squeeze else A


def pool_first_order_batch(A, index):
    """Pooled scores [P, R] for every pair in ``index`` from a batch tensor A [b, N, R, N]."""
    Ap = A[index.doc]
    mask = index.head[:, :, None, None] & index.tail[:, None, None, :]
    scores, weights = layers.masked_lse(Ap, mask, axes=(1, 3))
    return scores, (index, weights, A.shape)


def pool_first_order_backward(dscores, cache):
    index, weights, shape = cache
    dA = np.zeros(shape, dtype=weights.dtype)
    np.add.at(dA, index.doc, weights * dscores[:, None, :, None])
    return dA


def pool_first_order(A, pair):
    """Stabilized LogSumExp of A[i, r, j] over head mentions i and tail mentions j.

    ``A`` is one document's [N, R, N] tensor; returns a length-R vector.
    """
    if not isinstance(pair, MentionSets):
        pair = MentionSets(*pair)
    N = A.shape[0]
    index = PairIndex.build([(0, pair)], np.ones((1, N), dtype=bool))
    return pool_first_order_batch(A[None], index)[0][0]


def pool_first_order_loop(A, pair):
    """Reference double loop (compiled when available)."""
    pair.validate(A.shape[0])
    return kernels.first_order_loop(A, pair.head, pair.tail)
