"""Frame-to-sequence voting and detection metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .scenario import InteractionLabel


@dataclass
class ConfusionMatrix:
    """Sequence-level counts with interaction as the positive class."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass
class MetricsReport:
    """Accuracy / precision / recall / F1; undefined ratios are NaN, F1 falls
    back to 0 when precision + recall is 0 or undefined."""

    accuracy: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def vote(probs: np.ndarray, valid_mask: np.ndarray | None = None) -> InteractionLabel:
    """Equal-weight majority vote over the frame-wise class decisions.

    Each valid frame votes for its argmax class; ties (both across frames and
    within a frame) resolve to interaction, the safety-conservative side.
    """
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise DataError(f"expected (T, 2) probabilities, got {probs.shape}")
    if valid_mask is not None:
        probs = probs[np.asarray(valid_mask, dtype=bool)]
    if len(probs) == 0:
        raise DataError("no valid frames to vote on")
    votes_interaction = int(np.sum(probs[:, 1] >= probs[:, 0]))
    if votes_interaction * 2 >= len(probs):
        return InteractionLabel.INTERACTION
    return InteractionLabel.NON_INTERACTION


def confusion(
    predictions: list[InteractionLabel], truths: list[InteractionLabel]
) -> ConfusionMatrix:
    if len(predictions) != len(truths):
        raise DataError(
            f"prediction/truth length mismatch: {len(predictions)} vs {len(truths)}"
        )
    cm = ConfusionMatrix()
    for pred, truth in zip(predictions, truths):
        positive = pred is InteractionLabel.INTERACTION
        if truth is InteractionLabel.INTERACTION:
            cm.tp += positive
            cm.fn += not positive
        else:
            cm.fp += positive
            cm.tn += not positive
    return cm


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise DataError("empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if (cm.tp + cm.fp) > 0 else math.nan
    recall = cm.tp / (cm.tp + cm.fn) if (cm.tp + cm.fn) > 0 else math.nan
    if math.isnan(precision) or math.isnan(recall) or precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricsReport(accuracy, precision, recall, f1)
