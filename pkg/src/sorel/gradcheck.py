"""Central finite-difference checks for hand-written gradients."""
import numpy as np


def numeric_grad(f, x, eps=1e-5, entries=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    ``entries`` optionally restricts the check to some flat indices; the
    other entries of the result stay zero.
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric, floor=1e-5):
    """||a - n|| / max(||a|| + ||n||, floor).

    The floor keeps gradients that are identically zero (e.g. attention key
    biases, which softmax cancels) from reporting pure round-off as error.
    """
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(num / den)


def check_params(loss_fn, grads, params, eps=1e-5, max_entries=None, rng=None):
    """Relative error per parameter name. ``max_entries`` samples large tensors."""
    out = {}
    for name, p in params.items():
        entries = None
        ana = grads[name]
        if max_entries is not None and p.size > max_entries:
            rng = rng or np.random.default_rng(0)
            entries = rng.choice(p.size, size=max_entries, replace=False)
        num = numeric_grad(loss_fn, p, eps, entries)
        if entries is not None:
            sel = np.zeros(p.size, dtype=bool)
            sel[entries] = True
            out[name] = rel_error(ana.reshape(-1)[sel], num.reshape(-1)[sel])
        else:
            out[name] = rel_error(ana, num)
    return out
