"""F1 and rank-based ROC AUC for binary laundering predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


def confusion(pred, truth) -> dict[str, int]:
    pred = np.asarray(pred).astype(np.int64)
    truth = np.asarray(truth).astype(np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return {
        "tp": int(np.sum((pred == 1) & (truth == 1))),
        "fp": int(np.sum((pred == 1) & (truth == 0))),
        "tn": int(np.sum((pred == 0) & (truth == 0))),
        "fn": int(np.sum((pred == 0) & (truth == 1))),
    }


def _ratio(num, den):
    return num / den if den else 0.0


def precision_recall_f1(pred, truth) -> tuple[float, float, float]:
    c = confusion(pred, truth)
    p = _ratio(c["tp"], c["tp"] + c["fp"])
    r = _ratio(c["tp"], c["tp"] + c["fn"])
    return p, r, _ratio(2 * p * r, p + r)


def f1_score(pred, truth) -> float:
    """F1 of the positive class; any 0/0 term counts as 0."""
    return precision_recall_f1(pred, truth)[2]


def auc(scores, truth) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half (Mann-Whitney U with average ranks).
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(np.int64)
    if scores.shape != truth.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {truth.shape}")
    n_pos = int(np.sum(truth == 1))
    n_neg = int(np.sum(truth == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes in truth")
    ranks = rankdata(scores)
    u = ranks[truth == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    f1: float
    auc: float
    precision: float
    recall: float
    confusion: dict
    metadata: dict = field(default_factory=dict)

    @classmethod
    def evaluate(cls, pred, scores, truth, metadata=None) -> "MetricsReport":
        p, r, f = precision_recall_f1(pred, truth)
        return cls(f, auc(scores, truth), p, r, confusion(pred, truth), dict(metadata or {}))

    def to_dict(self) -> dict:
        return asdict(self)
