import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sorel import ner
from sorel.data import Document, Mention
from sorel.errors import InputError
from sorel.gradcheck import numeric_grad, rel_error

import oracles


def test_tag_vocab_bio():
    assert ner.tag_vocab(["Disease", "Chemical"]) == ["O", "B-Chemical", "I-Chemical", "B-Disease", "I-Disease"]


def test_tags_for_spans():
    tags = ner.tag_vocab(["X"])
    doc = Document("d", ["a", "b", "c", "d"], [Mention("m", "E", "X", 1, 3)])
    np.testing.assert_array_equal(ner.tags_for(doc, tags), [0, 1, 2, 0])


def test_logits_examples():
    reps = np.random.default_rng(0).normal(size=(2, 3, 4))
    assert not ner.ner_logits(reps, {"ner.W": np.zeros((4, 3)), "ner.b": np.zeros(3)}).any()
    np.testing.assert_array_equal(ner.ner_logits(reps, {"ner.W": np.eye(4)}), reps)
    W, b = np.random.default_rng(1).normal(size=(4, 3)), np.random.default_rng(2).normal(size=3)
    assert np.max(np.abs(ner.ner_logits(reps, {"ner.W": W, "ner.b": b}) - (oracles.matmul(reps, W) + b))) <= 1e-6
    with pytest.raises(InputError):
        ner.ner_logits(reps, {"ner.W": np.zeros((5, 3))})


def test_loss_examples():
    mask = np.ones((1, 3), dtype=bool)
    assert ner.ner_loss(np.zeros((1, 3, 5)), np.array([[0, 2, 4]]), mask)[0] == pytest.approx(math.log(5))
    logits = np.array([[[2.0, 0.0], [0.0, 2.0]]])
    assert ner.ner_loss(logits, np.array([[0, 1]]), np.ones((1, 2), bool))[0] == pytest.approx(0.126928, abs=1e-6)
    losses = [ner.ner_loss(np.array([[[m, 0.0]]]), np.array([[0]]), np.ones((1, 1), bool))[0] for m in (1, 5, 20, 40)]
    assert all(a > b for a, b in zip(losses, losses[1:])) and losses[-1] < 1e-15
    with pytest.raises(InputError):
        ner.ner_loss(logits, np.array([[0, 1]]), np.zeros((1, 2), bool))


def test_loss_ignores_padding():
    logits = np.random.default_rng(3).normal(size=(1, 3, 4))
    mask = np.array([[True, True, False]])
    a = ner.ner_loss(logits, np.array([[1, 2, 3]]), mask)[0]
    logits[0, 2] = 100.0
    assert ner.ner_loss(logits, np.array([[1, 2, 0]]), mask)[0] == a


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-100, 100))
def test_loss_shift_invariant_and_gradient(seed, shift):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(2, 4, 3))
    gold = rng.integers(0, 3, size=(2, 4))
    mask = rng.random((2, 4)) < 0.7
    mask[0, 0] = True
    base, d = ner.ner_loss(logits, gold, mask)
    shifted = logits + shift * rng.random((2, 4, 1))
    assert abs(ner.ner_loss(shifted, gold, mask)[0] - base) <= 1e-9
    num = numeric_grad(lambda: ner.ner_loss(logits, gold, mask)[0], logits)
    assert rel_error(d, num) <= 1e-4
