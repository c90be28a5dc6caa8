"""Evaluation metrics for bag-level predictions."""

from __future__ import annotations

import numpy as np

from .model import POSITIVE


def accuracy(truth, predicted) -> float:
    """Fraction of agreeing labels."""
    t = np.asarray(truth)
    p = np.asarray(predicted)
    if t.shape != p.shape or t.ndim != 1 or t.size == 0:
        raise ValueError("truth and predictions must be equal-length non-empty vectors")
    return float(np.mean(t == p))


def average_precision(labels, scores) -> float:
    """Area under the precision curve at the rank of each positive.

    Ranks by score descending with a stable sort, so equal scores keep
    their input order.  Requires at least one positive label.
    """
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1 or y.size == 0:
        raise ValueError("labels and scores must be equal-length non-empty vectors")
    order = np.argsort(-s, kind="stable")
    relevant = y[order] == POSITIVE
    total = int(relevant.sum())
    if total == 0:
        raise ValueError("average precision needs at least one positive label")
    hits = np.cumsum(relevant)
    ranks = np.arange(1, y.size + 1)
    precision_at_hit = hits[relevant] / ranks[relevant]
    return float(precision_at_hit.mean())
