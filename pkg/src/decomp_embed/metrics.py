"""Binary cross-entropy on logits and rank-based ROC AUC."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, UndefinedMetricError


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_loss(logits, labels) -> float:
    """Mean binary cross-entropy, ``softplus(z) - y * z`` per sample."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if z.size == 0 or z.size != y.size:
        raise ParameterError(f"need equal non-empty inputs, got {z.size} logits and {y.size} labels")
    return float(np.mean(softplus(z) - y * z))


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.size != y.size:
        raise ParameterError(f"{s.size} scores but {y.size} labels")
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    rank_sum = float(avg_rank[inverse][y].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)
