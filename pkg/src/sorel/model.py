"""Full scoring model: encoder, first/second-order relation heads, NER head.

Parameters live in a flat ``dict`` of named float arrays; gradients use the
same keys. All backward passes are written by hand.
"""
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from sorel import encoder as enc
from sorel import first_order as fo
from sorel import ner
from sorel import second_order as so
from sorel.errors import NumericError
from sorel.layers import log_softmax


@dataclass
class ModelConfig:
    encoder: enc.EncoderConfig
    num_relations: int
    num_tags: int
    proj_dim: int = 64
    mlp_hidden: int = 0  # 0 = model_dim
    second_order: bool = True  # False builds the first-order-only model
    ner_bias: bool = True

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = enc.EncoderConfig(**self.encoder)

    @property
    def hidden(self):
        return self.mlp_hidden or self.encoder.model_dim

    def validate(self):
        self.encoder.validate()
        return self

    def to_dict(self):
        return asdict(self)


def make_initializer(seed, dtype=np.float64):
    """Initializer with an independent stream per parameter name, so adding or
    dropping tensors never changes the values drawn for the others."""

    def init(name, shape, kind):
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        if kind == "bias":
            return np.zeros(shape, dtype=dtype)
        if kind == "ones":
            return np.ones(shape, dtype=dtype)
        if kind == "embedding":
            return rng.normal(0.0, 0.02, size=shape).astype(dtype)
        if kind == "conv":
            fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
        elif len(shape) == 3:  # [d, R, d] relation tensors
            fan_in, fan_out = shape[0], shape[2]
        else:
            fan_in, fan_out = shape
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=shape).astype(dtype)

    return init


def init_params(cfg, seed=0, dtype=np.float64):
    init = make_initializer(seed, dtype)
    D, H, d, R = cfg.encoder.model_dim, cfg.hidden, cfg.proj_dim, cfg.num_relations
    p = enc.init_params(cfg.encoder, init)
    p.update(fo.init_projector("fo", D, H, d, init))
    p["fo.L"] = init("fo.L", (d, R, d), "bilinear")
    if cfg.second_order:
        p.update(fo.init_projector("so", D, H, d, init))
        p["so.M"] = init("so.M", (d, R, d), "bilinear")
    p.update(ner.init_head(D, cfg.num_tags, init, bias=cfg.ner_bias))
    return p


def _represent(params, batch, cfg, train, rng):
    x, ce = enc.embed_forward(params, batch.tokens, cfg.encoder, train, rng)
    h, cenc = enc.encode_forward(params, x, batch.tokens, cfg.encoder, train, rng)
    return h, (ce, cenc)


def _scores(params, h, batch, cfg, alpha, train, rng):
    p_drop = cfg.encoder.dropout_p
    e1h, c1h = fo.project_forward(h, params["fo.head.W1"], params["fo.head.W2"], p_drop, rng, train)
    e1t, c1t = fo.project_forward(h, params["fo.tail.W1"], params["fo.tail.W2"], p_drop, rng, train)
    A, cA = fo.biaffine_forward(e1h, e1t, params["fo.L"])
    s1, cp1 = fo.pool_first_order_batch(A, batch.index)
    cache = {"fo": (c1h, c1t, cA, cp1)}
    s2 = None
    if cfg.second_order and alpha != 0:
        e2h, c2h = fo.project_forward(h, params["so.head.W1"], params["so.head.W2"], p_drop, rng, train)
        e2t, c2t = fo.project_forward(h, params["so.tail.W1"], params["so.tail.W2"], p_drop, rng, train)
        B, cB = so.intermediate_scores_forward(e2h, e2t, params["so.M"])
        s2, cp2 = so.second_order_fused(B, batch.index)
        cache["so"] = (c2h, c2t, cB, cp2)
    return s1, s2, so.combine(s1, s2, alpha), cache


def _scores_backward(dcomb, cache, alpha, grads):
    c1h, c1t, cA, cp1 = cache["fo"]
    dA = fo.pool_first_order_backward(dcomb, cp1)
    de1h, de1t, grads["fo.L"] = fo.biaffine_backward(dA, cA)
    dh1, grads["fo.head.W1"], grads["fo.head.W2"] = fo.project_backward(de1h, c1h)
    dh2, grads["fo.tail.W1"], grads["fo.tail.W2"] = fo.project_backward(de1t, c1t)
    dh = dh1 + dh2
    if "so" in cache:
        c2h, c2t, cB, cp2 = cache["so"]
        dB = so.second_order_fused_backward(alpha * dcomb, cp2)
        de2h, de2t, grads["so.M"] = so.intermediate_scores_backward(dB, cB)
        dh3, grads["so.head.W1"], grads["so.head.W2"] = fo.project_backward(de2h, c2h)
        dh4, grads["so.tail.W1"], grads["so.tail.W2"] = fo.project_backward(de2t, c2t)
        dh = dh + dh3 + dh4
    return dh


def re_loss(combined, gold):
    """Mean softmax cross-entropy over relation types; returns ``(loss, dscores)``."""
    combined = np.asarray(combined, dtype=float)
    gold = np.asarray(gold)
    P = len(gold)
    if P == 0:
        return 0.0, np.zeros_like(combined)
    logp = log_softmax(combined, axis=-1)
    loss = -logp[np.arange(P), gold].mean()
    d = np.exp(logp)
    d[np.arange(P), gold] -= 1.0
    return float(loss), d / P


def predict_scores(params, batch, cfg, alpha):
    """Eval-mode ``(scores1, scores2, combined)`` for the batch's pairs."""
    h, _ = _represent(params, batch, cfg, False, None)
    s1, s2, comb, _ = _scores(params, h, batch, cfg, alpha, False, None)
    return s1, s2, comb


def ner_predict(params, batch, cfg):
    h, _ = _represent(params, batch, cfg, False, None)
    return ner.ner_logits(h, params)


def loss_and_grads(params, batch, cfg, task="re", alpha=0.0, train=False, rng=None):
    """Loss of one task (``"re"``, ``"ner"`` or ``"joint"`` = their sum) and
    its exact gradient for every parameter tensor."""
    h, (ce, cenc) = _represent(params, batch, cfg, train, rng)
    grads = {}
    dh = np.zeros_like(h)
    loss = 0.0
    if task in ("re", "joint") and batch.num_pairs:
        _, _, comb, cache = _scores(params, h, batch, cfg, alpha, train, rng)
        l_re, dcomb = re_loss(comb, batch.labels)
        loss += l_re
        dh += _scores_backward(dcomb, cache, alpha, grads)
    if task in ("ner", "joint"):
        logits, cn = ner.ner_logits_forward(h, params["ner.W"], params.get("ner.b"))
        l_ner, dlogits = ner.ner_loss(logits, batch.tags, batch.tokens.pad_mask)
        loss += l_ner
        dhn, grads["ner.W"], db = ner.ner_logits_backward(dlogits, cn)
        if db is not None:
            grads["ner.b"] = db
        dh += dhn
    dx = enc.encode_backward(dh, cenc, grads)
    enc.embed_backward(dx, ce, grads)
    full = {}
    for name, value in params.items():
        g = grads.get(name)
        g = np.zeros_like(value) if g is None else g.reshape(value.shape)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient", where=name)
        full[name] = g
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", where=task)
    return loss, full


def task_loss(params, batch, cfg, task="re", alpha=0.0):
    """Eval-mode loss only; used by finite-difference checks."""
    h, _ = _represent(params, batch, cfg, False, None)
    loss = 0.0
    if task in ("re", "joint") and batch.num_pairs:
        _, _, comb, _ = _scores(params, h, batch, cfg, alpha, False, None)
        loss += re_loss(comb, batch.labels)[0]
    if task in ("ner", "joint"):
        logits = ner.ner_logits(h, params)
        loss += ner.ner_loss(logits, batch.tags, batch.tokens.pad_mask)[0]
    return loss
