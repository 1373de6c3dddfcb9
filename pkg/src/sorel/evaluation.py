"""Decision rule and macro precision / recall / F1."""
from dataclasses import dataclass

import numpy as np

from sorel.errors import InputError


def predict(scores, vocab):
    """Argmax label per row; ties go to the negative class, then the lowest index."""
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise InputError("scores must be [num_pairs, R]")
    best = scores.max(axis=1, keepdims=True)
    tied = scores == best
    labels = tied.argmax(axis=1)
    neg = vocab.negative_index
    return np.where(tied[:, neg], neg, labels)


@dataclass
class ClassScores:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


@dataclass
class Report:
    per_class: list
    precision: float  # macro over non-negative classes
    recall: float
    f1: float
    all_precision: float  # macro over every class, negative included
    all_recall: float
    all_f1: float

    def to_record(self):
        return {
            "macro": {"precision": self.precision, "recall": self.recall, "f1": self.f1},
            "macro_all_classes": {"precision": self.all_precision, "recall": self.all_recall, "f1": self.all_f1},
            "per_class": [vars(c) for c in self.per_class],
        }


def _ratio(a, b):
    return a / b if b else 0.0


def macro_prf(predictions, golds, vocab):
    predictions = np.asarray(predictions)
    golds = np.asarray(golds)
    if predictions.shape != golds.shape:
        raise InputError(f"prediction count {predictions.shape} != gold count {golds.shape}")
    rows = []
    for c, name in enumerate(vocab.names):
        tp = int(np.sum((predictions == c) & (golds == c)))
        npred = int(np.sum(predictions == c))
        ngold = int(np.sum(golds == c))
        p, r = _ratio(tp, npred), _ratio(tp, ngold)
        rows.append(ClassScores(name, p, r, _ratio(2 * p * r, p + r), ngold, npred))
    pos = [row for i, row in enumerate(rows) if i != vocab.negative_index]

    def mean(rs, attr):
        return float(np.mean([getattr(x, attr) for x in rs])) if rs else 0.0

    return Report(rows, mean(pos, "precision"), mean(pos, "recall"), mean(pos, "f1"),
                  mean(rows, "precision"), mean(rows, "recall"), mean(rows, "f1"))
