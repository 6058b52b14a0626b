"""Classification metrics."""

from __future__ import annotations

from collections.abc import Sequence


def confusion_counts(predictions: Sequence[int], labels: Sequence[int]) -> tuple[int, int, int, int]:
    """``(tp, fp, fn, tn)`` with label 1 as the positive class."""
    if len(predictions) != len(labels):
        raise ValueError(f"f1_score: {len(predictions)} predictions for {len(labels)} labels")
    if not labels:
        raise ValueError("f1_score: empty input")
    tp = fp = fn = tn = 0
    for p, y in zip(predictions, labels):
        p, y = int(p), int(y)
        if p not in (0, 1) or y not in (0, 1):
            raise ValueError(f"f1_score: values must be binary, got prediction {p}, label {y}")
        if p and y:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def f1_score(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """F1 of the positive class (label 1).

    Returns 0 when precision + recall is zero, which includes the case of
    no predicted and no actual positives.
    """
    tp, fp, fn, _ = confusion_counts(predictions, labels)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def f1_is_degenerate(predictions: Sequence[int], labels: Sequence[int]) -> bool:
    """True when F1 fell back to the zero-denominator convention."""
    tp, fp, fn, _ = confusion_counts(predictions, labels)
    return tp == 0 and fp == 0 and fn == 0
