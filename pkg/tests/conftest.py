import numpy as np
import pytest

from sorel import data, ner
from sorel.encoder import EncoderConfig
from sorel.model import ModelConfig, init_params

TAGS = ner.tag_vocab(["Chemical", "Disease"])


def tiny_model_config(vocab_size, kind="transformer", second_order=True, dropout=0.0, word_dropout=0.0):
    enc = EncoderConfig(vocab_size=vocab_size, model_dim=8, num_layers=2, num_heads=2, ffn_filters=6,
                        dropout_p=dropout, word_dropout_p=word_dropout, max_positions=32, kind=kind)
    return ModelConfig(enc, num_relations=4, num_tags=len(TAGS), proj_dim=4, mlp_hidden=5,
                       second_order=second_order)


def synth_examples(num_docs=2, doc_len=9, seed=3, docs=None):
    if docs is None:
        docs = data.gen_synthetic(data.SynthConfig(num_docs=num_docs, doc_len=doc_len, vocab_size=60, seed=seed))
    tv = data.TokenVocab.from_documents(docs)
    rv = data.synth_relation_vocab(3)
    return data.prepare(docs, tv, rv, TAGS), tv, rv


@pytest.fixture
def two_doc_batch():
    docs = data.gen_synthetic(data.SynthConfig(num_docs=2, doc_len=9, vocab_size=60, seed=3))
    # different lengths so padding is exercised
    docs[1].tokens = docs[1].tokens[:8]
    ex, tv, rv = synth_examples(docs=docs)
    return data.batch_examples(ex), tv, rv


@pytest.fixture
def perturbed_params():
    """Params with every tensor (biases and gains included) moved off its init value."""

    def make(cfg, seed=1, scale=0.3):
        p = init_params(cfg, seed)
        rng = np.random.default_rng(seed + 100)
        return {k: v + rng.normal(0.0, scale, v.shape) for k, v in p.items()}

    return make


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
