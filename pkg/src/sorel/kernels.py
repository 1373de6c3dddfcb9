"""Loop-kernel backend selection.

The compiled extension is preferred; set ``SOREL_PURE_PYTHON=1`` to force
the pure-Python loops. ``BACKEND`` names whichever was picked at import.
"""
import os

import numpy as np

from sorel import _loops_py

try:
    from sorel import _loops as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("SOREL_PURE_PYTHON"):
    _impl = _compiled
    BACKEND = "compiled"
else:
    _impl = _loops_py
    BACKEND = "python"


def backends():
    """Map of every importable backend name to its module."""
    found = {"python": _loops_py}
    if _compiled is not None:
        found["compiled"] = _compiled
    return found


def _prep(x, idx):
    return np.ascontiguousarray(x, dtype=np.float64), [np.ascontiguousarray(i, dtype=np.intp) for i in idx]


def first_order_loop(A, head, tail, impl=None):
    A, (head, tail) = _prep(A, (head, tail))
    return (impl or _impl).first_order_loop(A, head, tail)


def second_order_loop(B, head, tail, ctx, impl=None):
    B, (head, tail, ctx) = _prep(B, (head, tail, ctx))
    return (impl or _impl).second_order_loop(B, head, tail, ctx)
