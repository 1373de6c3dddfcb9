"""Forward/backward primitives used by every model component.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache and returns input gradients
(plus parameter gradients where the layer has parameters).
"""
import numpy as np

LN_EPS = 1e-5


def linear_forward(x, W, b=None):
    out = x @ W
    if b is not None:
        out = out + b
    return out, (x, W, b is not None)


def linear_backward(dout, cache):
    x, W, has_bias = cache
    dx = dout @ W.T
    dW = x.reshape(-1, x.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    db = dout.reshape(-1, dout.shape[-1]).sum(axis=0) if has_bias else None
    return dx, dW, db


def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, x > 0


def relu_backward(dout, cache):
    return dout * cache


def dropout_forward(x, p, rng, train):
    """Inverted dropout. Identity (and no RNG draw) when ``p == 0`` or not training."""
    if not train or p <= 0.0:
        return x, None
    if p >= 1.0:
        return np.zeros_like(x), np.zeros_like(x)
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, (xhat, rstd, gain)


def layer_norm_backward(dout, cache):
    xhat, rstd, gain = cache
    D = xhat.shape[-1]
    flat = dout.reshape(-1, D)
    dgain = (flat * xhat.reshape(-1, D)).sum(axis=0)
    dbias = flat.sum(axis=0)
    dxhat = dout * gain
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def conv1d_forward(x, W, b):
    """Length-preserving 1-D convolution over the sequence axis.

    x: [batch, N, C_in]; W: [width, C_in, C_out] with odd width; zero padding
    of ``width // 2`` on both sides.
    """
    width = W.shape[0]
    pad = width // 2
    batch, N, cin = x.shape
    if width == 1:
        cols = x
    else:
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        cols = np.concatenate([xp[:, t:t + N] for t in range(width)], axis=-1)
    out = cols @ W.reshape(width * cin, -1) + b
    return out, (cols, W)


def conv1d_backward(dout, cache):
    cols, W = cache
    width, cin, cout = W.shape
    batch, N, _ = dout.shape
    Wf = W.reshape(width * cin, cout)
    dW = (cols.reshape(-1, width * cin).T @ dout.reshape(-1, cout)).reshape(W.shape)
    db = dout.reshape(-1, cout).sum(axis=0)
    dcols = dout @ Wf.T
    if width == 1:
        return dcols, dW, db
    pad = width // 2
    dxp = np.zeros((batch, N + 2 * pad, cin), dtype=dout.dtype)
    for t in range(width):
        dxp[:, t:t + N] += dcols[..., t * cin:(t + 1) * cin]
    return dxp[:, pad:pad + N], dW, db


def masked_lse(x, mask, axes):
    """Max-shifted LogSumExp of ``x`` over ``axes`` restricted to ``mask``.

    Returns ``(value, weights)`` where ``weights`` are the softmax weights of
    the contributing entries (zero elsewhere), i.e. d value / d x.
    Reductions with no contributing entry give ``-inf`` and zero weights.
    """
    masked = np.where(mask, x, -np.inf)
    m = masked.max(axis=axes, keepdims=True)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(masked - safe_m)
    s = e.sum(axis=axes, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(s) + safe_m
        weights = np.where(s > 0, e / s, 0.0)
    return np.squeeze(value, axis=axes), weights
