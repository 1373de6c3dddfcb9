import math

import numpy as np
import pytest

from sorel import model as mdl
from sorel import training
from sorel.errors import ValidationError
from sorel.training import AdamState, TrainConfig

from conftest import TAGS, synth_examples, tiny_model_config


def test_re_loss_uniform_is_log_r():
    loss, _ = mdl.re_loss(np.zeros((3, 4)), [0, 1, 3])
    assert loss == pytest.approx(math.log(4))


def test_re_loss_known_value():
    loss, d = mdl.re_loss(np.array([[2.0, 0.0]]), [0])
    assert loss == pytest.approx(0.126928, abs=1e-6)
    assert d.sum() == pytest.approx(0.0)


def test_re_loss_decreases_with_gold_score():
    losses = [mdl.re_loss(np.array([[s, 0.0, 0.0]]), [0])[0] for s in np.linspace(-3, 3, 13)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_clip_scales_to_threshold():
    grads = {"a": np.array([6.0, 8.0])}
    clipped, norm = training.clip_gradients(grads, 5.0)
    assert norm == pytest.approx(10.0)
    np.testing.assert_allclose(clipped["a"], [3.0, 4.0])


def test_clip_keeps_small_gradients():
    grads = {"a": np.array([0.6, 0.8])}
    clipped, _ = training.clip_gradients(grads, 5.0)
    np.testing.assert_array_equal(clipped["a"], grads["a"])


def test_clip_never_increases_norm():
    rng = np.random.default_rng(0)
    for _ in range(50):
        grads = {k: rng.normal(0, rng.uniform(0.01, 10), size=5) for k in "abc"}
        clipped, norm = training.clip_gradients(grads, 5.0)
        assert training.global_norm(clipped) <= min(norm, 5.0) + 1e-9


def test_single_adam_step():
    params = {"w": np.zeros(1)}
    state = AdamState.zeros(params)
    training.clip_and_step({"w": np.array([1.0])}, params, state, TrainConfig())
    assert params["w"][0] == pytest.approx(-0.0005, rel=1e-6)


def test_frozen_params_do_not_move():
    params = {"emb.word": np.ones(2), "w": np.ones(2)}
    state = AdamState.zeros(params)
    training.clip_and_step({k: np.ones(2) for k in params}, params, state, TrainConfig(), frozen={"emb.word"})
    np.testing.assert_array_equal(params["emb.word"], 1.0)
    assert np.all(params["w"] < 1.0)


def test_alpha_zero_gives_zero_second_order_grads(two_doc_batch, perturbed_params):
    batch, tv, _ = two_doc_batch
    cfg = tiny_model_config(len(tv))
    _, grads = mdl.loss_and_grads(perturbed_params(cfg), batch, cfg, "re", alpha=0.0)
    so = [k for k in grads if k.startswith("so.")]
    assert so and all(not np.any(grads[k]) for k in so)


def test_zero_projection_gives_zero_bilinear_grad(two_doc_batch, perturbed_params):
    batch, tv, _ = two_doc_batch
    cfg = tiny_model_config(len(tv))
    p = perturbed_params(cfg)
    p["fo.head.W2"][:] = 0.0
    p["fo.tail.W2"][:] = 0.0
    _, grads = mdl.loss_and_grads(p, batch, cfg, "re", alpha=0.2)
    assert not np.any(grads["fo.L"])


def _setup(num_docs=8, seed=5, **kw):
    ex, tv, rv = synth_examples(num_docs=num_docs, seed=seed)
    cfg = tiny_model_config(len(tv), dropout=0.1, word_dropout=0.1, **kw)
    return ex, cfg, rv


def test_zero_epochs_returns_initial_params():
    ex, cfg, rv = _setup()
    init = mdl.init_params(cfg, 3)
    res = training.train(ex, ex, cfg, TrainConfig(epochs=0, seed=3), vocab=rv)
    assert res.history == []
    for k, v in init.items():
        np.testing.assert_array_equal(res.params[k], v)


def test_training_is_deterministic():
    ex, cfg, rv = _setup()
    tc = TrainConfig(epochs=2, batch_size=3, seed=4)
    a = training.train(ex, ex, cfg, tc, ex, tags=TAGS, vocab=rv)
    b = training.train(ex, ex, cfg, tc, ex, tags=TAGS, vocab=rv)
    assert a.history == b.history
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_strict_alternation_with_cycling():
    ex, cfg, rv = _setup()
    res = training.train(ex, ex[:3], cfg, TrainConfig(epochs=1, batch_size=2, seed=0), vocab=rv)
    # 4 RE batches, 2 NER batches; NER cycles to keep the alternation
    assert res.trace == ["re", "ner"] * 4


def test_history_schema():
    ex, cfg, rv = _setup()
    res = training.train(ex, ex, cfg, TrainConfig(epochs=2, batch_size=4), ex, tags=TAGS, vocab=rv)
    assert [(r["epoch"], r["task"]) for r in res.history] == [(1, "re"), (1, "ner"), (2, "re"), (2, "ner")]
    for r in res.history:
        assert set(r) == {"epoch", "task", "loss", "dev_p", "dev_r", "dev_f1"}
        assert 0.0 <= r["dev_f1"] <= 1.0
    assert res.best_epoch in (1, 2)


def test_second_order_disabled_matches_alpha_zero():
    ex, cfg, rv = _setup()
    _, cfg_fo, _ = _setup(second_order=False)
    tc = TrainConfig(epochs=2, batch_size=3, alpha=0.0, seed=2)
    full = training.train(ex, ex, cfg, tc, ex, vocab=rv)
    only = training.train(ex, ex, cfg_fo, tc, ex, vocab=rv)
    assert full.history == only.history
    for k, v in only.params.items():
        np.testing.assert_array_equal(full.params[k], v)


def test_loss_decreases_on_fixed_batch():
    ex, cfg, rv = _setup(num_docs=4)
    from sorel.data import batch_examples
    batch = batch_examples(ex)
    improved = 0
    for seed in range(10):
        params = mdl.init_params(cfg, seed)
        state = AdamState.zeros(params)
        tc = TrainConfig(learn_rate=0.01)
        start = mdl.task_loss(params, batch, cfg, "joint", 0.2)
        for _ in range(10):
            _, grads = mdl.loss_and_grads(params, batch, cfg, "joint", alpha=0.2)
            training.clip_and_step(grads, params, state, tc)
        improved += mdl.task_loss(params, batch, cfg, "joint", 0.2) <= start
    assert improved >= 8


def test_checkpoint_round_trip(tmp_path):
    ex, tv, rv = synth_examples(num_docs=3)
    cfg = tiny_model_config(len(tv))
    params = mdl.init_params(cfg, 9)
    path = tmp_path / "ck.npz"
    training.save_checkpoint(path, params, cfg, TrainConfig(alpha=0.5), tv, rv, TAGS)
    ck = training.load_checkpoint(path)
    assert ck.model_cfg == cfg
    assert ck.train_cfg.alpha == 0.5
    assert ck.token_vocab.words == tv.words
    assert ck.rel_vocab.names == rv.names
    assert ck.tags == list(TAGS)
    for k, v in params.items():
        np.testing.assert_array_equal(ck.params[k], v)


def test_checkpoint_shape_mismatch(tmp_path):
    _, tv, rv = synth_examples(num_docs=3)
    cfg = tiny_model_config(len(tv))
    params = mdl.init_params(cfg, 9)
    params["fo.L"] = np.zeros((4, 4, 5))
    path = tmp_path / "ck.npz"
    training.save_checkpoint(path, params, cfg, None, tv, rv, TAGS)
    with pytest.raises(ValidationError, match="fo.L"):
        training.load_checkpoint(path)


def test_tune_alpha_single_value():
    ex, cfg, rv = _setup(num_docs=4)
    best, scores, res = training.tune_alpha(ex, ex, ex, cfg, TrainConfig(epochs=1, alpha_sweep=[0.0]), vocab=rv)
    assert best == 0.0 and set(scores) == {0.0}


def test_tune_alpha_rescore_trains_once():
    ex, cfg, rv = _setup(num_docs=4)
    tc = TrainConfig(epochs=1, alpha_sweep=[0.5, 0.0, 1.0], tune_mode="rescore", alpha=0.5)
    best, scores, res = training.tune_alpha(ex, ex, ex, cfg, tc, vocab=rv)
    assert list(scores) == [0.0, 0.5, 1.0]
    assert best in scores and scores[best] == max(scores.values())
    # ties prefer the smaller alpha
    assert all(scores[a] < scores[best] for a in scores if a < best)


def test_stop_f1_ends_training_early():
    ex, cfg, rv = _setup()
    res = training.train(ex, ex, cfg, TrainConfig(epochs=5, stop_f1=0.0), ex, vocab=rv)
    assert [r["epoch"] for r in res.history] == [1, 1]


@pytest.mark.slow
def test_tune_alpha_prefers_second_order_on_bridge_task():
    from sorel import data
    from sorel.encoder import EncoderConfig

    docs = data.gen_synthetic(data.SynthConfig(num_docs=1100, doc_len=16, vocab_size=200, seed=4))
    tv = data.TokenVocab.from_documents(docs[:1000])
    rv = data.synth_relation_vocab(3)
    tr, dev = data.prepare(docs[:1000], tv, rv, TAGS), data.prepare(docs[1000:], tv, rv, TAGS)
    cfg = mdl.ModelConfig(EncoderConfig(vocab_size=len(tv), model_dim=32, kind="bag", max_positions=64),
                          len(rv), len(TAGS), proj_dim=16)
    tc = TrainConfig(epochs=30, batch_size=32, seed=4, alpha_sweep=[0, 0.2, 1.0])
    best, scores, _ = training.tune_alpha(tr, tr, dev, cfg, tc, vocab=rv)
    assert best > 0
    assert scores[best] > scores[0.0]
