"""Relation scoring with first-order (bi-affine) and second-order
(context-token bridged) scores, plus joint NER and a toy training loop."""
from sorel.kernels import BACKEND
from sorel.pairs import MentionSets, PairIndex, context_set
from sorel.second_order import combine, second_order_efficient, second_order_naive

__all__ = ["BACKEND", "MentionSets", "PairIndex", "combine", "context_set",
           "second_order_efficient", "second_order_naive"]
__version__ = "0.1.0"
