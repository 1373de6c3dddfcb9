import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sorel import second_order as so
from sorel.errors import InputError
from sorel.gradcheck import numeric_grad, rel_error
from sorel.pairs import MentionSets, PairIndex, context_set

import oracles


def random_case(rng, N=None, R=None, dtype=np.float64):
    N = N or int(rng.integers(7, 25))
    R = R or int(rng.integers(1, 6))
    B = rng.uniform(-5, 5, size=(N, R, N)).astype(dtype)
    pos = rng.permutation(N)
    nh, nt = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    ms = MentionSets(pos[:nh], pos[nh:nh + nt])
    return B, ms, context_set(ms, np.ones(N, dtype=bool))


def test_intermediate_scores_examples():
    assert not so.intermediate_scores(np.ones((3, 2)), np.ones((3, 2)), np.zeros((2, 1, 2))).any()
    M = np.eye(2)[:, None, :]
    assert so.intermediate_scores(np.array([[2.0, 0.0]]), np.array([[3.0, 0.0]]), M)[0, 0, 0] == 6.0


def test_intermediate_scores_triple_loop():
    rng = np.random.default_rng(0)
    eh, et, M = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(3, 2, 3))
    assert np.max(np.abs(so.intermediate_scores(eh, et, M) - oracles.triple_loop_bilinear(eh, et, M))) <= 1e-6


def test_naive_single_term():
    B = np.zeros((3, 1, 3))
    B[0, 0, 1], B[1, 0, 2] = 1.0, 2.0
    assert so.second_order_naive(B, MentionSets([0], [2]), [1])[0] == 3.0


def test_naive_two_context_closed_form():
    B = np.zeros((4, 1, 4))
    B[0, 0, 1], B[1, 0, 3] = 0.25, 0.75  # C = 1.0 via k = 1
    B[0, 0, 2], B[2, 0, 3] = 1.5, 0.5  # C = 2.0 via k = 2
    out = so.second_order_naive(B, MentionSets([0], [3]), [1, 2])
    assert out[0] == pytest.approx(2.313262, abs=1e-6)
    eff = so.second_order_efficient(B, [(MentionSets([0], [3]), [1, 2])])
    assert eff[0, 0] == pytest.approx(2.313262, abs=1e-6)


def test_zero_B_equal_terms():
    B = np.zeros((7, 2, 7))
    ms = MentionSets([0, 1], [5, 6])
    ctx = [2, 3, 4]
    expect = math.log(3 * 2 * 2)
    np.testing.assert_allclose(so.second_order_naive(B, ms, ctx), expect, atol=1e-12)
    np.testing.assert_allclose(so.second_order_efficient(B, [(ms, ctx)])[0], expect, atol=1e-12)


def test_single_context_token_degenerate_contraction():
    rng = np.random.default_rng(1)
    B = rng.uniform(-5, 5, size=(3, 2, 3))
    ms = MentionSets([0], [2])
    eff = so.second_order_efficient(B, [(ms, [1])])[0]
    np.testing.assert_allclose(eff, B[0, :, 1] + B[1, :, 2], atol=1e-12)
    np.testing.assert_allclose(eff, so.second_order_naive(B, ms, [1]), atol=1e-12)


def test_empty_context_sentinel():
    B = np.zeros((2, 3, 2))
    ms = MentionSets([0], [1])
    assert np.all(so.second_order_naive(B, ms, []) == so.NO_CONTEXT)
    assert np.all(so.second_order_efficient(B, [(ms, [])]) == so.NO_CONTEXT)
    assert np.isfinite(so.combine(np.zeros(3), so.NO_CONTEXT * np.ones(3), 0.2)).all()


def test_errors():
    B = np.zeros((4, 1, 4))
    with pytest.raises(InputError):
        so.second_order_naive(B, MentionSets([], [1]), [2])
    with pytest.raises(InputError):
        so.second_order_naive(B, MentionSets([0], [1]), [1, 2])
    with pytest.raises(InputError):
        so.second_order_efficient(B, [(MentionSets([0], [1]), [0])])


def test_overlapping_mentions_allowed():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(6, 2, 6))
    ms = MentionSets([0, 1], [1, 2])
    ctx = context_set(ms, np.ones(6, dtype=bool))
    assert ctx == (3, 4, 5)
    np.testing.assert_allclose(so.second_order_efficient(B, [(ms, ctx)])[0], oracles.second_order(B, ms.head, ms.tail, ctx),
                               atol=1e-10)


def test_combine():
    s1 = np.array([0.1, -2.0, 3.3])
    out = so.combine(s1, np.array([5.0, 1.0, -7.0]), 0.0)
    assert out.tobytes() == s1.tobytes() and out is not s1
    assert so.combine([1.0], [3.0], 0.2)[0] == pytest.approx(1.6)
    np.testing.assert_array_equal(so.combine(s1, np.zeros(3), 1.0), s1)


def test_oracle_equivalence_float32():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        B, ms, ctx = random_case(rng, dtype=np.float32)
        eff = so.second_order_efficient(B, [(ms, ctx)])[0]
        ref = so.second_order_naive(B.astype(np.float64), ms, ctx)
        worst = max(worst, float(np.max(np.abs(eff - ref))))
    assert worst <= 1e-5


def test_fused_multi_pair_matches_per_pair():
    rng = np.random.default_rng(4)
    N, R = 12, 3
    B = rng.uniform(-5, 5, size=(2, N, R, N))
    pad = np.ones((2, N), dtype=bool)
    pad[1, 9:] = False
    entries = [(0, MentionSets([0], [3, 4])), (0, MentionSets([3, 4], [0])), (1, MentionSets([1, 2], [8]))]
    index = PairIndex.build(entries, pad)
    fused, _ = so.second_order_fused(B, index)
    for p, (b, ms) in enumerate(entries):
        ctx = context_set(ms, pad[b])
        np.testing.assert_allclose(fused[p], oracles.second_order(B[b], ms.head, ms.tail, ctx), atol=1e-10)


def test_dense_path_matches_and_reports_cube():
    rng = np.random.default_rng(5)
    B = rng.uniform(-5, 5, size=(1, 9, 2, 9))
    index = PairIndex.build([(0, MentionSets([0], [8]))], np.ones((1, 9), dtype=bool))
    stats = {}
    dense = so.second_order_dense(B, index, stats)
    np.testing.assert_allclose(dense, so.second_order_fused(B, index)[0], atol=1e-10)
    assert stats["c_tensor_bytes"] == 1 * 2 * 9 ** 3 * 8




@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_context_permutation_and_bounds(seed):
    rng = np.random.default_rng(seed)
    B, ms, ctx = random_case(rng)
    base = so.second_order_efficient(B, [(ms, ctx)])[0]
    shuffled = so.second_order_efficient(B, [(ms, list(rng.permutation(ctx)))])[0]
    assert np.max(np.abs(base - shuffled)) <= 1e-9
    C = np.array([[B[i, :, k] + B[k, :, j] for k in ctx for i in ms.head for j in ms.tail]])[0]
    mx = C.max(axis=0)
    m = len(ctx) * len(ms.head) * len(ms.tail)
    assert np.all(mx <= base + 1e-10) and np.all(base <= mx + math.log(m) + 1e-10)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), delta=st.floats(0.01, 3.0))
def test_monotone_in_contributing_entries(seed, delta):
    rng = np.random.default_rng(seed)
    B, ms, ctx = random_case(rng)
    index = PairIndex.from_sets([(ms, ctx)], B.shape[0])
    base, cache = so.second_order_fused(B[None], index)
    r = int(rng.integers(B.shape[1]))
    k = int(rng.choice(ctx))
    if rng.random() < 0.5:
        x, y = int(rng.choice(ms.head)), k
    else:
        x, y = k, int(rng.choice(ms.tail))
    up = np.zeros_like(base)
    up[0, r] = 1.0
    weight = so.second_order_fused_backward(up, cache)[0, x, r, y]
    B2 = B.copy()
    B2[x, r, y] += delta
    new = so.second_order_fused(B2[None], index)[0]
    assert new[0, r] >= base[0, r]
    if weight > 1e-12:
        assert new[0, r] > base[0, r]


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_exclusion_of_unrelated_entries(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(8, 20))
    B = rng.uniform(-5, 5, size=(N, 3, N))
    pos = rng.permutation(N)
    ms = MentionSets(pos[:2], pos[2:3])
    ctx = list(pos[3:3 + int(rng.integers(1, N - 4))])
    outside = [int(i) for i in pos if i not in set(ms.head) | set(ms.tail) | set(ctx)]
    base = so.second_order_efficient(B, [(ms, ctx)])
    B2 = B.copy()
    if outside:
        B2[np.ix_(outside, range(3), outside)] = rng.uniform(-50, 50, size=(len(outside), 3, len(outside)))
    # head -> tail and context -> context entries never take part either
    B2[np.ix_(list(ms.head), range(3), list(ms.tail))] += 10.0
    B2[np.ix_(ctx, range(3), ctx)] -= 10.0
    assert np.array_equal(so.second_order_efficient(B2, [(ms, ctx)]), base)


def test_gradients_through_combine_and_pooling():
    rng = np.random.default_rng(6)
    N, R, d = 7, 3, 3
    eh, et, M = rng.normal(size=(2, N, d)), rng.normal(size=(2, N, d)), rng.normal(size=(d, R, d))
    pad = np.ones((2, N), dtype=bool)
    pad[1, 5:] = False
    index = PairIndex.build([(0, MentionSets([0, 1], [5])), (1, MentionSets([4], [0, 2]))], pad)
    s1 = rng.normal(size=(2, R))
    up = rng.normal(size=(2, R))
    alpha = 0.2

    def f():
        B, _ = so.intermediate_scores_forward(eh, et, M)
        return float((so.combine(s1, so.second_order_fused(B, index)[0], alpha) * up).sum())

    B, cB = so.intermediate_scores_forward(eh, et, M)
    _, cache = so.second_order_fused(B, index)
    dB = so.second_order_fused_backward(alpha * up, cache)
    dh, dt, dM = so.intermediate_scores_backward(dB, cB)
    assert rel_error(dM, numeric_grad(f, M)) <= 1e-4
    assert rel_error(dh, numeric_grad(f, eh)) <= 1e-4
    assert rel_error(dt, numeric_grad(f, et)) <= 1e-4

    def g():
        return float((so.combine(s1, so.second_order_fused(Bv, index)[0], alpha) * up).sum())

    Bv = B.copy()
    assert rel_error(dB, numeric_grad(g, Bv)) <= 1e-4
