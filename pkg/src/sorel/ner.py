"""Token-level entity tagging head (BIO tags over entity types)."""
import numpy as np

from sorel import layers
from sorel.errors import InputError

OUTSIDE = "O"


def tag_vocab(entity_types):
    """BIO tag list: ``O`` first, then ``B-``/``I-`` per type in sorted order."""
    tags = [OUTSIDE]
    for t in sorted(set(entity_types)):
        tags += [f"B-{t}", f"I-{t}"]
    return tags


def init_head(model_dim, num_tags, init, bias=True):
    if num_tags < 2:
        raise InputError("need at least one entity type plus the outside tag")
    p = {"ner.W": init("ner.W", (model_dim, num_tags), "matrix")}
    if bias:
        p["ner.b"] = init("ner.b", (num_tags,), "bias")
    return p


def ner_logits_forward(reps, W, b=None):
    if reps.shape[-1] != W.shape[0]:
        raise InputError(f"representation dim {reps.shape[-1]} does not match W_er {W.shape}")
    return layers.linear_forward(reps, W, b)


def ner_logits_backward(dlogits, cache):
    return layers.linear_backward(dlogits, cache)


def ner_logits(reps, params):
    return ner_logits_forward(reps, params["ner.W"], params.get("ner.b"))[0]


def ner_loss(logits, gold_tags, pad_mask):
    """Mean cross-entropy over unmasked tokens; returns ``(loss, dlogits)``."""
    pad_mask = np.asarray(pad_mask, dtype=bool)
    n = int(pad_mask.sum())
    if n == 0:
        raise InputError("all positions are masked")
    gold = np.where(pad_mask, gold_tags, 0)
    logp = layers.log_softmax(logits, axis=-1)
    picked = np.take_along_axis(logp, gold[..., None], axis=-1)[..., 0]
    loss = -(picked * pad_mask).sum() / n
    d = np.exp(logp)
    np.put_along_axis(d, gold[..., None], np.take_along_axis(d, gold[..., None], axis=-1) - 1.0, axis=-1)
    d *= pad_mask[..., None] / n
    return float(loss), d


def tags_for(doc, tags, length=None):
    """Gold BIO tag ids for ``doc`` (later mentions overwrite overlaps)."""
    index = {t: i for i, t in enumerate(tags)}
    out = np.zeros(length or len(doc.tokens), dtype=np.int64)
    for m in doc.mentions:
        if m.start >= len(out):
            continue
        out[m.start] = index[f"B-{m.entity_type}"]
        out[m.start + 1:min(m.end, len(out))] = index[f"I-{m.entity_type}"]
    return out
