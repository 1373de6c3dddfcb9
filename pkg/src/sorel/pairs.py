"""Index structures for candidate pairs: mention sets, context sets, and the
per-batch :class:`PairIndex` that the vectorized pooling kernels consume."""
from dataclasses import dataclass

import numpy as np

from sorel.errors import InputError


@dataclass(frozen=True)
class MentionSets:
    head: tuple
    tail: tuple

    def __post_init__(self):
        object.__setattr__(self, "head", tuple(int(i) for i in self.head))
        object.__setattr__(self, "tail", tuple(int(i) for i in self.tail))

    def validate(self, n_tokens, pad_mask=None):
        for role, idx in (("head", self.head), ("tail", self.tail)):
            if not idx:
                raise InputError(f"empty {role} mention set")
            if min(idx) < 0 or max(idx) >= n_tokens:
                raise InputError(f"{role} mention index out of range [0, {n_tokens})")
            if pad_mask is not None and not np.all(pad_mask[list(idx)]):
                raise InputError(f"{role} mention set touches padding")


def context_set(mentions, pad_mask):
    """Unpadded token indices outside both mention sets."""
    keep = np.asarray(pad_mask, dtype=bool).copy()
    keep[list(mentions.head)] = False
    keep[list(mentions.tail)] = False
    return tuple(int(i) for i in np.flatnonzero(keep))


@dataclass
class PairIndex:
    """Candidate pairs of one batch as boolean masks over token positions.

    doc: [P] batch row of each pair; head/tail/ctx: [P, N] masks.
    """

    doc: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    ctx: np.ndarray

    def __len__(self):
        return len(self.doc)

    @classmethod
    def build(cls, entries, pad_mask):
        """``entries``: iterable of ``(batch_row, MentionSets)``; contexts derived from ``pad_mask``."""
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.ndim == 1:
            pad_mask = pad_mask[None]
        N = pad_mask.shape[1]
        entries = list(entries)
        P = len(entries)
        doc = np.zeros(P, dtype=np.intp)
        head = np.zeros((P, N), dtype=bool)
        tail = np.zeros((P, N), dtype=bool)
        for p, (b, ms) in enumerate(entries):
            ms.validate(N, pad_mask[b])
            doc[p] = b
            head[p, list(ms.head)] = True
            tail[p, list(ms.tail)] = True
        ctx = pad_mask[doc] & ~head & ~tail
        return cls(doc, head, tail, ctx)

    @classmethod
    def from_sets(cls, pairs, n_tokens):
        """Single-document index from explicit ``(MentionSets, context)`` tuples."""
        P = len(pairs)
        head = np.zeros((P, n_tokens), dtype=bool)
        tail = np.zeros((P, n_tokens), dtype=bool)
        ctx = np.zeros((P, n_tokens), dtype=bool)
        for p, (ms, c) in enumerate(pairs):
            ms.validate(n_tokens)
            head[p, list(ms.head)] = True
            tail[p, list(ms.tail)] = True
            c = list(c)
            if c and (min(c) < 0 or max(c) >= n_tokens):
                raise InputError("context index out of range")
            ctx[p, c] = True
            if np.any(ctx[p] & (head[p] | tail[p])):
                raise InputError("context set overlaps a mention set")
        return cls(np.zeros(P, dtype=np.intp), head, tail, ctx)
