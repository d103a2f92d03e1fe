"""Threshold-free ranking metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    pass


def _grouped_counts(scores, labels):
    """Cumulative (tp, fp) after each distinct score, walking from the highest."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order].astype(np.float64)
    # last index of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return tp, fp


def auc_roc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; tied scores form one step."""
    tp, fp = _grouped_counts(scores, labels)
    n_pos, n_neg = tp[-1] if len(tp) else 0, fp[-1] if len(fp) else 0
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs both classes present")
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_pr(scores, labels) -> float:
    """Average precision: sum of precision at each recall increment."""
    tp, fp = _grouped_counts(scores, labels)
    n_pos = tp[-1] if len(tp) else 0
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one positive")
    recall = np.r_[0.0, tp / n_pos]
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(recall) * precision))


@dataclass
class MetricsRecord:
    round: int
    auc_roc: float
    auc_pr: float
    global_loss: float | None
    dataset: str

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "global_loss": self.global_loss,
            "dataset": self.dataset,
        }
