"""Ranked-retrieval metrics: non-interpolated average precision and its mean."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import EvaluationError

__all__ = ["average_precision", "mean_ap"]


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Non-interpolated AP of a scored binary ranking.

    Items are ranked by score descending, ties keeping original order; AP is
    the mean, over positives, of the precision at each positive's rank.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise EvaluationError("scores and labels must have equal length")
    if not np.any(labels > 0):
        raise EvaluationError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, start=1):
        if labels[idx] > 0:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / hits


def mean_ap(per_class_ap: Sequence[float]) -> float:
    """Arithmetic mean of per-class AP values."""
    values = list(per_class_ap)
    if not values:
        raise EvaluationError("mean AP of an empty class list is undefined")
    return sum(values) / len(values)
