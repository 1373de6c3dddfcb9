"""Token encoder: learned word + position embeddings followed by transformer
blocks whose feedforward sublayer is a width 1 / 5 / 1 convolution stack.

A ``"bag"`` encoder kind skips the blocks entirely, so each output vector
depends on its own token only.
"""
from dataclasses import asdict, dataclass

import numpy as np

from sorel import layers
from sorel.errors import CapacityError, ConfigError, InputError, NumericError

PAD_ID = 0
UNK_ID = 1
FFN_WIDTHS = (1, 5, 1)


@dataclass
class EncoderConfig:
    vocab_size: int
    model_dim: int = 64
    num_layers: int = 2
    num_heads: int = 8
    ffn_filters: int = 256
    dropout_p: float = 0.3
    word_dropout_p: float = 0.15
    max_positions: int = 512
    kind: str = "transformer"

    def validate(self):
        for name in ("vocab_size", "model_dim", "num_layers", "num_heads", "ffn_filters", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        for name in ("dropout_p", "word_dropout_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.kind not in ("transformer", "bag"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class TokenBatch:
    token_ids: np.ndarray  # [batch, N] int
    pad_mask: np.ndarray  # [batch, N] bool, True = real token

    @property
    def shape(self):
        return self.token_ids.shape

    @classmethod
    def from_lists(cls, seqs, length=None):
        length = length or max((len(s) for s in seqs), default=0)
        ids = np.zeros((len(seqs), length), dtype=np.int64)
        mask = np.zeros((len(seqs), length), dtype=bool)
        for b, s in enumerate(seqs):
            ids[b, :len(s)] = s
            mask[b, :len(s)] = True
        return cls(ids, mask)


def init_params(cfg, init):
    """Parameter tensors for ``cfg``; ``init(name, shape, kind)`` draws values."""
    D, F = cfg.model_dim, cfg.ffn_filters
    p = {
        "emb.word": init("emb.word", (cfg.vocab_size, D), "embedding"),
        "emb.pos": init("emb.pos", (cfg.max_positions, D), "embedding"),
    }
    if cfg.kind == "bag":
        return p
    for l in range(cfg.num_layers):
        pre = f"enc.{l}."
        for n in "qkvo":
            p[pre + f"attn.W{n}"] = init(pre + f"attn.W{n}", (D, D), "matrix")
            p[pre + f"attn.b{n}"] = init(pre + f"attn.b{n}", (D,), "bias")
        dims = (D, F, F, D)
        for c, width in enumerate(FFN_WIDTHS, start=1):
            p[pre + f"ffn.W{c}"] = init(pre + f"ffn.W{c}", (width, dims[c - 1], dims[c]), "conv")
            p[pre + f"ffn.b{c}"] = init(pre + f"ffn.b{c}", (dims[c],), "bias")
        for ln in ("ln1", "ln2"):
            p[pre + f"{ln}.g"] = init(pre + f"{ln}.g", (D,), "ones")
            p[pre + f"{ln}.b"] = init(pre + f"{ln}.b", (D,), "bias")
    return p


def _check_batch(batch, cfg):
    ids = batch.token_ids
    if ids.ndim != 2 or batch.pad_mask.shape != ids.shape:
        raise InputError(f"token_ids {ids.shape} and pad_mask {batch.pad_mask.shape} must be equal 2-D shapes")
    if ids.shape[1] > cfg.max_positions:
        raise CapacityError(f"sequence length {ids.shape[1]} exceeds max_positions {cfg.max_positions}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise InputError(f"token id outside [0, {cfg.vocab_size})")


def embed_forward(params, batch, cfg, train=False, rng=None):
    _check_batch(batch, cfg)
    ids = batch.token_ids
    mask = batch.pad_mask
    if train and cfg.word_dropout_p > 0:
        drop = (rng.random(ids.shape) < cfg.word_dropout_p) & mask
        ids = np.where(drop, UNK_ID, ids)
    N = ids.shape[1]
    m = mask[..., None].astype(params["emb.word"].dtype)
    x = (params["emb.word"][ids] + params["emb.pos"][:N]) * m
    x, dcache = layers.dropout_forward(x, cfg.dropout_p, rng, train)
    return x, (ids, m, dcache, params["emb.word"].shape, params["emb.pos"].shape)


def embed_backward(dx, cache, grads):
    ids, m, dcache, word_shape, pos_shape = cache
    dx = layers.dropout_backward(dx, dcache) * m
    gw = np.zeros(word_shape, dtype=dx.dtype)
    np.add.at(gw, ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    gp = np.zeros(pos_shape, dtype=dx.dtype)
    gp[:dx.shape[1]] = dx.sum(axis=0)
    grads["emb.word"] = gw
    grads["emb.pos"] = gp


def _split(x, H):
    b, N, D = x.shape
    return x.reshape(b, N, H, D // H).transpose(0, 2, 1, 3)


def _merge(x):
    b, H, N, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, N, H * dk)


def attention_forward(params, pre, x, mask, H):
    q, cq = layers.linear_forward(x, params[pre + "Wq"], params[pre + "bq"])
    k, ck = layers.linear_forward(x, params[pre + "Wk"], params[pre + "bk"])
    v, cv = layers.linear_forward(x, params[pre + "Wv"], params[pre + "bv"])
    Q, K, V = _split(q, H), _split(k, H), _split(v, H)
    scale = 1.0 / np.sqrt(Q.shape[-1])
    S = (Q @ K.transpose(0, 1, 3, 2)) * scale
    # an all-padding row attends everywhere; its output is zeroed downstream
    keys = mask | ~mask.any(axis=1, keepdims=True)
    S = np.where(keys[:, None, None, :], S, -np.inf)
    P = layers.softmax(S, axis=-1)
    O = _merge(P @ V)
    out, co = layers.linear_forward(O, params[pre + "Wo"], params[pre + "bo"])
    return out, (cq, ck, cv, co, Q, K, V, P, scale)


def attention_backward(dout, cache, grads, pre):
    cq, ck, cv, co, Q, K, V, P, scale = cache
    H = Q.shape[1]
    dO, grads[pre + "Wo"], grads[pre + "bo"] = layers.linear_backward(dout, co)
    dO = _split(dO, H)
    dP = dO @ V.transpose(0, 1, 3, 2)
    dV = P.transpose(0, 1, 3, 2) @ dO
    dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * scale
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    dx = 0.0
    for n, d, c in (("q", dQ, cq), ("k", dK, ck), ("v", dV, cv)):
        dxi, grads[pre + f"W{n}"], grads[pre + f"b{n}"] = layers.linear_backward(_merge(d), c)
        dx = dx + dxi
    return dx


def ffn_forward(params, pre, x, m):
    caches = []
    h = x
    for c in range(1, 4):
        h, cc = layers.conv1d_forward(h, params[pre + f"W{c}"], params[pre + f"b{c}"])
        rc = None
        if c < 3:
            h, rc = layers.relu_forward(h)
            # padded positions must stay zero so width-5 windows never see them
            h = h * m
        caches.append((cc, rc))
    return h, caches


def ffn_backward(dout, caches, grads, pre, m):
    d = dout
    for c in range(3, 0, -1):
        cc, rc = caches[c - 1]
        if rc is not None:
            d = layers.relu_backward(d * m, rc)
        d, grads[pre + f"W{c}"], grads[pre + f"b{c}"] = layers.conv1d_backward(d, cc)
    return d


def encode_forward(params, x, batch, cfg, train=False, rng=None):
    if cfg.kind == "bag":
        return x, []
    mask = batch.pad_mask
    m = mask[..., None].astype(x.dtype)
    caches = []
    h = x
    for l in range(cfg.num_layers):
        pre = f"enc.{l}."
        a, ca = attention_forward(params, pre + "attn.", h, mask, cfg.num_heads)
        a, da = layers.dropout_forward(a, cfg.dropout_p, rng, train)
        h1, cl1 = layers.layer_norm_forward(h + a, params[pre + "ln1.g"], params[pre + "ln1.b"])
        h1 = h1 * m
        f, cf = ffn_forward(params, pre + "ffn.", h1, m)
        f, df = layers.dropout_forward(f, cfg.dropout_p, rng, train)
        h2, cl2 = layers.layer_norm_forward(h1 + f, params[pre + "ln2.g"], params[pre + "ln2.b"])
        h2 = h2 * m
        if not np.all(np.isfinite(h2)):
            raise NumericError("non-finite encoder activation", where=f"layer {l}")
        caches.append({"attn": ca, "drop_a": da, "ln1": cl1, "ffn": cf, "drop_f": df, "ln2": cl2, "m": m})
        h = h2
    return h, caches


def encode_backward(dh, caches, grads):
    for l in range(len(caches) - 1, -1, -1):
        pre = f"enc.{l}."
        c = caches[l]
        m = c["m"]
        d2, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = layers.layer_norm_backward(dh * m, c["ln2"])
        df = layers.dropout_backward(d2, c["drop_f"])
        d1 = d2 + ffn_backward(df, c["ffn"], grads, pre + "ffn.", m)
        d1, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = layers.layer_norm_backward(d1 * m, c["ln1"])
        da = layers.dropout_backward(d1, c["drop_a"])
        dh = d1 + attention_backward(da, c["attn"], grads, pre + "attn.")
    return dh


def attention_weights(caches):
    """Per-layer attention probabilities [batch, heads, N, N] from an encode cache."""
    return [c["attn"][7] for c in caches]


def embed(batch, params, cfg, mode="eval", rng=None):
    return embed_forward(params, batch, cfg, train=(mode == "train"), rng=rng)[0]


def encode(reps, batch, params, cfg, mode="eval", rng=None):
    return encode_forward(params, reps, batch, cfg, train=(mode == "train"), rng=rng)[0]
