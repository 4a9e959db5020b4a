"""Binary classification metrics: precision, recall, F1, ROC AUC.

Zero-denominator convention: a metric whose denominator is zero is 1.0 when
its condition is vacuously satisfied (no predicted positives and no actual
positives at the same time) and 0.0 otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    auc: float | None
    confusion: Confusion

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "tp": self.confusion.tp,
            "fp": self.confusion.fp,
            "tn": self.confusion.tn,
            "fn": self.confusion.fn,
        }


def _check_binary(values: np.ndarray, what: str) -> None:
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{what} must contain only 0 and 1")


def classify_metrics(labels, predictions) -> EvalResult:
    """Precision, recall, F1 and the confusion counts for 0/1 arrays."""
    y = np.asarray(labels).reshape(-1)
    p = np.asarray(predictions).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"labels ({y.shape[0]}) and predictions ({p.shape[0]}) differ")
    if y.size == 0:
        raise ValueError("empty inputs")
    _check_binary(y, "labels")
    _check_binary(p, "predictions")

    tp = int(np.sum((y == 1) & (p == 1)))
    fp = int(np.sum((y == 0) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    fn = int(np.sum((y == 1) & (p == 0)))

    vacuous = (tp + fp == 0) and (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp > 0 else (1.0 if vacuous else 0.0)
    recall = tp / (tp + fn) if tp + fn > 0 else (1.0 if vacuous else 0.0)
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return EvalResult(
        precision=precision,
        recall=recall,
        f1=f1,
        auc=None,
        confusion=Confusion(tp=tp, fp=fp, tn=tn, fn=fn),
    )


def auc(labels, scores) -> float:
    """Area under the ROC curve by rank statistics.

    Equivalent to the fraction of (positive, negative) pairs the scores
    order correctly, with ties counting one half. Implemented with midranks
    so it runs in O(n log n). Raises ValueError when only one class is
    present.
    """
    y = np.asarray(labels).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise ValueError(f"labels ({y.shape[0]}) and scores ({s.shape[0]}) differ")
    _check_binary(y, "labels")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")

    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(s.shape[0], dtype=np.float64)
    i = 0
    while i < sorted_s.shape[0]:
        j = i
        while j + 1 < sorted_s.shape[0] and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        # 1-based midrank for the tie group [i, j].
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1

    pos_rank_sum = float(np.sum(ranks[y == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(labels, predictions, scores=None) -> EvalResult:
    """classify_metrics plus AUC when ranking scores are supplied."""
    result = classify_metrics(labels, predictions)
    if scores is not None:
        result.auc = auc(labels, scores)
    return result
